#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "condssl/cohort.hpp"
#include "condssl/rng.hpp"

namespace condssl {

enum class SamplerMode {
  Random,            // uniform over all tiles
  Conditional,       // n slides, then m/n tiles from each
  FullyConditional,  // every tile of the batch from one slide
};

struct BatchSpec {
  std::size_t batch_size = 128;
  SamplerMode mode = SamplerMode::Conditional;
  std::size_t slides_per_batch = 4;  // n, read only in Conditional mode

  // Number of distinct slides per batch; 0 for Random.
  std::size_t slides() const;
  std::size_t tiles_per_slide() const { return batch_size / slides(); }

  // Conditional mode requires 1 < n <= m and n | m.
  void validate() const;

  // "random" or "cond:N"; cond:1 yields FullyConditional.
  static BatchSpec parse(std::string_view text, std::size_t batch_size);
  std::string to_string() const;
};

struct Batch {
  std::vector<std::int64_t> tile_ids;
  std::vector<std::int64_t> slide_ids;
  std::vector<std::size_t> positions;  // indices into the tile list the sampler was built from
};

// Tile positions grouped by slide, in ascending slide_id order.
class SlideIndex {
 public:
  explicit SlideIndex(std::span<const TileRecord> tiles);

  std::size_t num_tiles() const { return tile_ids_.size(); }
  std::size_t num_slides() const { return slide_ids_.size(); }
  std::int64_t slide_id(std::size_t slide) const { return slide_ids_[slide]; }
  std::span<const std::size_t> slide_tiles(std::size_t slide) const { return members_[slide]; }
  std::int64_t tile_id(std::size_t position) const { return tile_ids_[position]; }
  std::int64_t slide_of(std::size_t position) const { return tile_slide_[position]; }

 private:
  std::vector<std::int64_t> slide_ids_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::int64_t> tile_ids_;
  std::vector<std::int64_t> tile_slide_;
};

// Draws one batch. Tiles are drawn without replacement within a slide.
Batch sample_batch(const SlideIndex& index, const BatchSpec& spec, Rng& rng);

// One epoch of batches covering every tile of every eligible slide at least once.
// Random: a shuffled pass, last batch topped up with already-visited tiles.
// Conditional: each eligible slide is cut into chunks of m/n tiles; chunks are
// shuffled and grouped n distinct slides per batch. Slides with fewer than m/n
// tiles are skipped for the epoch.
std::vector<Batch> epoch_schedule(const SlideIndex& index, const BatchSpec& spec, Rng& rng);

}  // namespace condssl
