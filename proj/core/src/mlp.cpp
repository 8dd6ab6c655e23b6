#include "condssl/mlp.hpp"

#include <cmath>

#include "condssl/error.hpp"

namespace condssl {

Mlp::Mlp(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw InvalidArgument("Mlp needs at least input and output sizes");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] == 0 || sizes_[l + 1] == 0) throw InvalidArgument("Mlp layer size must be positive");
    offsets_.push_back(total);
    total += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  params_.assign(total, 0.0);
}

void Mlp::init_random(Rng& rng, double gain) {
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    double* w = params_.data() + weight_offset(l);
    for (std::size_t i = 0; i < in * out; ++i) w[i] = dist(rng);
    double* b = params_.data() + bias_offset(l);
    for (std::size_t i = 0; i < out; ++i) b[i] = 0.0;
  }
}

std::span<const double> Mlp::forward(std::span<const double> x, Workspace& ws) const {
  if (x.size() != input_dim()) {
    throw InvalidArgument("Mlp input has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(input_dim()));
  }
  ws.act.resize(sizes_.size());
  ws.act[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    const double* w = params_.data() + weight_offset(l);
    const double* b = params_.data() + bias_offset(l);
    const std::vector<double>& a = ws.act[l];
    std::vector<double>& z = ws.act[l + 1];
    z.resize(out);
    const bool hidden = l + 1 < num_layers();
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = w + o * in;
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * a[i];
      z[o] = hidden ? std::tanh(s) : s;
    }
  }
  return ws.act.back();
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  Workspace ws;
  auto out = forward(x, ws);
  return {out.begin(), out.end()};
}

void Mlp::backward(const Workspace& ws, std::span<const double> grad_out,
                   std::span<double> grad_params, std::span<double> grad_input) const {
  std::vector<double> delta(grad_out.begin(), grad_out.end());
  std::vector<double> prev;
  for (std::size_t l = num_layers(); l-- > 0;) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    // delta holds dL/d(pre-activation) of layer l after this adjustment.
    if (l + 1 < num_layers()) {
      const std::vector<double>& h = ws.act[l + 1];
      for (std::size_t o = 0; o < out; ++o) delta[o] *= 1.0 - h[o] * h[o];
    }
    const double* w = params_.data() + weight_offset(l);
    double* gw = grad_params.data() + weight_offset(l);
    double* gb = grad_params.data() + bias_offset(l);
    const std::vector<double>& a = ws.act[l];
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      double* gwr = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) gwr[i] += d * a[i];
      gb[o] += d;
    }
    if (l == 0 && grad_input.empty()) break;
    prev.assign(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* wr = w + o * in;
      for (std::size_t i = 0; i < in; ++i) prev[i] += d * wr[i];
    }
    delta.swap(prev);
  }
  if (!grad_input.empty()) {
    for (std::size_t i = 0; i < grad_input.size(); ++i) grad_input[i] = delta[i];
  }
}

}  // namespace condssl
