#include "condssl/sampling.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <numeric>
#include <unordered_set>

#include "condssl/error.hpp"
#include "condssl/log.hpp"

namespace condssl {

std::size_t BatchSpec::slides() const {
  switch (mode) {
    case SamplerMode::Random:
      return 0;
    case SamplerMode::FullyConditional:
      return 1;
    case SamplerMode::Conditional:
      return slides_per_batch;
  }
  return 0;
}

void BatchSpec::validate() const {
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (mode != SamplerMode::Conditional) return;
  const std::size_t n = slides_per_batch;
  if (n <= 1 || n > batch_size) {
    throw InvalidArgument("conditional sampling needs 1 < n <= m (n = " + std::to_string(n) +
                          ", m = " + std::to_string(batch_size) + ")");
  }
  if (batch_size % n != 0) {
    throw InvalidArgument("n = " + std::to_string(n) + " does not divide batch size " +
                          std::to_string(batch_size));
  }
}

BatchSpec BatchSpec::parse(std::string_view text, std::size_t batch_size) {
  BatchSpec spec;
  spec.batch_size = batch_size;
  if (text == "random") {
    spec.mode = SamplerMode::Random;
    spec.slides_per_batch = 0;
  } else if (text.substr(0, 5) == "cond:") {
    std::size_t n = 0;
    const auto digits = text.substr(5);
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || n == 0) {
      throw InvalidArgument("bad sampler '" + std::string(text) + "'");
    }
    spec.mode = n == 1 ? SamplerMode::FullyConditional : SamplerMode::Conditional;
    spec.slides_per_batch = n;
  } else {
    throw InvalidArgument("sampler must be 'random' or 'cond:N', got '" + std::string(text) + "'");
  }
  spec.validate();
  return spec;
}

std::string BatchSpec::to_string() const {
  if (mode == SamplerMode::Random) return "random";
  return "cond:" + std::to_string(slides());
}

SlideIndex::SlideIndex(std::span<const TileRecord> tiles) {
  std::map<std::int64_t, std::vector<std::size_t>> groups;
  tile_ids_.reserve(tiles.size());
  tile_slide_.reserve(tiles.size());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    groups[tiles[i].slide_id].push_back(i);
    tile_ids_.push_back(tiles[i].tile_id);
    tile_slide_.push_back(tiles[i].slide_id);
  }
  for (auto& [slide, members] : groups) {
    slide_ids_.push_back(slide);
    members_.push_back(std::move(members));
  }
}

namespace {

Batch make_batch(const SlideIndex& index, std::vector<std::size_t> positions) {
  Batch b;
  b.tile_ids.reserve(positions.size());
  b.slide_ids.reserve(positions.size());
  for (std::size_t p : positions) {
    b.tile_ids.push_back(index.tile_id(p));
    b.slide_ids.push_back(index.slide_of(p));
  }
  b.positions = std::move(positions);
  return b;
}

std::vector<std::size_t> eligible_slides(const SlideIndex& index, std::size_t per_slide) {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < index.num_slides(); ++s) {
    if (index.slide_tiles(s).size() >= per_slide) out.push_back(s);
  }
  return out;
}

// k distinct tiles of one slide in random order.
std::vector<std::size_t> draw_from_slide(const SlideIndex& index, std::size_t slide, std::size_t k,
                                         Rng& rng) {
  const auto members = index.slide_tiles(slide);
  std::vector<std::size_t> out;
  out.reserve(k);
  std::sample(members.begin(), members.end(), std::back_inserter(out), k, rng);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace

Batch sample_batch(const SlideIndex& index, const BatchSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t m = spec.batch_size;
  if (spec.mode == SamplerMode::Random) {
    if (index.num_tiles() < m) {
      throw SamplingError("random batch of " + std::to_string(m) + " needs " + std::to_string(m) +
                          " tiles, cohort has " + std::to_string(index.num_tiles()));
    }
    std::vector<std::size_t> all(index.num_tiles());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> chosen;
    chosen.reserve(m);
    std::sample(all.begin(), all.end(), std::back_inserter(chosen), m, rng);
    std::shuffle(chosen.begin(), chosen.end(), rng);
    return make_batch(index, std::move(chosen));
  }

  const std::size_t n = spec.slides();
  const std::size_t per_slide = spec.tiles_per_slide();
  const std::vector<std::size_t> eligible = eligible_slides(index, per_slide);
  if (eligible.size() < n) {
    throw SamplingError("conditional batch needs " + std::to_string(n) + " slides with >= " +
                        std::to_string(per_slide) + " tiles, only " +
                        std::to_string(eligible.size()) + " available (deficit " +
                        std::to_string(n - eligible.size()) + ")");
  }
  std::vector<std::size_t> slides;
  std::sample(eligible.begin(), eligible.end(), std::back_inserter(slides), n, rng);
  std::shuffle(slides.begin(), slides.end(), rng);
  std::vector<std::size_t> positions;
  positions.reserve(m);
  for (std::size_t s : slides) {
    auto drawn = draw_from_slide(index, s, per_slide, rng);
    positions.insert(positions.end(), drawn.begin(), drawn.end());
  }
  return make_batch(index, std::move(positions));
}

std::vector<Batch> epoch_schedule(const SlideIndex& index, const BatchSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t m = spec.batch_size;
  std::vector<Batch> batches;

  if (spec.mode == SamplerMode::Random) {
    const std::size_t total = index.num_tiles();
    if (total < m) {
      throw SamplingError("random batch of " + std::to_string(m) + " needs " + std::to_string(m) +
                          " tiles, cohort has " + std::to_string(total));
    }
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < total; start += m) {
      const std::size_t end = std::min(total, start + m);
      std::vector<std::size_t> positions(order.begin() + start, order.begin() + end);
      if (positions.size() < m) {
        // Top up from tiles already visited this epoch.
        std::vector<std::size_t> extra;
        std::sample(order.begin(), order.begin() + start, std::back_inserter(extra),
                    m - positions.size(), rng);
        positions.insert(positions.end(), extra.begin(), extra.end());
      }
      batches.push_back(make_batch(index, std::move(positions)));
    }
    return batches;
  }

  const std::size_t n = spec.slides();
  const std::size_t per_slide = spec.tiles_per_slide();
  const std::vector<std::size_t> eligible = eligible_slides(index, per_slide);
  if (eligible.size() < index.num_slides()) {
    log_warning(std::to_string(index.num_slides() - eligible.size()) + " slide(s) with fewer than " +
                std::to_string(per_slide) + " tiles excluded from conditional sampling");
  }
  if (eligible.size() < n) {
    throw SamplingError("conditional batch needs " + std::to_string(n) + " slides with >= " +
                        std::to_string(per_slide) + " tiles, only " +
                        std::to_string(eligible.size()) + " available (deficit " +
                        std::to_string(n - eligible.size()) + ")");
  }

  struct Chunk {
    std::size_t slide;
    std::vector<std::size_t> positions;
  };
  std::vector<Chunk> chunks;
  for (std::size_t s : eligible) {
    const auto members = index.slide_tiles(s);
    std::vector<std::size_t> order(members.begin(), members.end());
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += per_slide) {
      const std::size_t end = std::min(order.size(), start + per_slide);
      Chunk c{s, std::vector<std::size_t>(order.begin() + start, order.begin() + end)};
      if (c.positions.size() < per_slide) {
        std::sample(order.begin(), order.begin() + start, std::back_inserter(c.positions),
                    per_slide - c.positions.size(), rng);
      }
      chunks.push_back(std::move(c));
    }
  }
  std::shuffle(chunks.begin(), chunks.end(), rng);

  std::vector<bool> used(chunks.size(), false);
  std::size_t remaining = chunks.size();
  std::size_t first_unused = 0;
  while (remaining > 0) {
    std::vector<std::size_t> batch_slides;
    std::vector<std::size_t> positions;
    positions.reserve(m);
    for (std::size_t i = first_unused; i < chunks.size() && batch_slides.size() < n; ++i) {
      if (used[i]) continue;
      if (std::find(batch_slides.begin(), batch_slides.end(), chunks[i].slide) != batch_slides.end()) {
        continue;
      }
      used[i] = true;
      --remaining;
      batch_slides.push_back(chunks[i].slide);
      positions.insert(positions.end(), chunks[i].positions.begin(), chunks[i].positions.end());
    }
    while (first_unused < chunks.size() && used[first_unused]) ++first_unused;
    if (batch_slides.size() < n) {
      // Pad with fresh chunks from slides not yet in this batch.
      std::vector<std::size_t> others;
      for (std::size_t s : eligible) {
        if (std::find(batch_slides.begin(), batch_slides.end(), s) == batch_slides.end()) {
          others.push_back(s);
        }
      }
      std::vector<std::size_t> pads;
      std::sample(others.begin(), others.end(), std::back_inserter(pads), n - batch_slides.size(), rng);
      std::shuffle(pads.begin(), pads.end(), rng);
      for (std::size_t s : pads) {
        auto drawn = draw_from_slide(index, s, per_slide, rng);
        positions.insert(positions.end(), drawn.begin(), drawn.end());
      }
    }
    batches.push_back(make_batch(index, std::move(positions)));
  }
  return batches;
}

}  // namespace condssl
