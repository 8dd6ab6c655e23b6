#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "condssl/rng.hpp"

namespace condssl {

// Fully connected network with tanh hidden units and a linear output layer.
// layer_sizes = {in, hidden..., out}; {in, out} is a plain affine map.
// Parameters are one flat vector: for each layer W (out x in, row-major) then b.
class Mlp {
 public:
  // Per-call activations; act[0] is the input, act.back() the output.
  struct Workspace {
    std::vector<std::vector<double>> act;
  };

  Mlp() = default;
  explicit Mlp(std::vector<std::size_t> layer_sizes);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  std::size_t num_layers() const { return sizes_.size() - 1; }
  std::size_t num_params() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  // Offset of layer l's weight block inside params(); biases follow it.
  std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const { return offsets_[l] + sizes_[l + 1] * sizes_[l]; }

  // Glorot-uniform weights scaled by gain, zero biases.
  void init_random(Rng& rng, double gain = 1.0);

  std::span<const double> forward(std::span<const double> x, Workspace& ws) const;
  std::vector<double> forward(std::span<const double> x) const;

  // Backpropagates grad_out (dL/d output) through the activations stored in ws.
  // Adds dL/dparams into grad_params; writes dL/dx into grad_input when non-empty.
  void backward(const Workspace& ws, std::span<const double> grad_out,
                std::span<double> grad_params, std::span<double> grad_input = {}) const;

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.sizes_ == b.sizes_ && a.params_ == b.params_;
  }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

}  // namespace condssl
