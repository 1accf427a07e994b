// Generative convolutional network trained with the energy score.
//
// Architecture: three conv blocks (two 3x3 same-padded convolutions each,
// ReLU, 2x2 floor max-pool; blocks after the first carry a residual skip
// over their convolutions through a 1x1 channel projection), then flatten,
// a dense layer, a multiplicative noise layer fed by latents ~ N(1, I), and
// a head-specific output layer:
//   ParamHead: lambda through exp(linear), nu through 2*sigmoid
//   ThetaHead: each support point through 1 + sigmoid
// The energy-score loss is computed on the internal scale (log lambda,
// sigmoid output) with analytic gradients throughout. The same machinery
// runs the squared-error point network when the noise layer is disabled.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "maxstable/common.hpp"
#include "maxstable/dataset.hpp"
#include "maxstable/fields.hpp"
#include "maxstable/rng.hpp"
#include "maxstable/scoring.hpp"
#include "maxstable/spatial.hpp"

namespace maxstable {

enum class HeadKind { Param, Theta };
enum class LossKind { EnergyScore, SquaredError };

inline std::string head_name(HeadKind h) { return h == HeadKind::Param ? "params" : "theta"; }
inline HeadKind head_from_name(const std::string& s) {
  if (s == "params") return HeadKind::Param;
  if (s == "theta") return HeadKind::Theta;
  throw DomainError("unknown head kind: " + s);
}

struct NetworkSpec {
  int input_nx = 30, input_ny = 30;
  std::vector<int> channels = {32, 64, 128};
  int convs_per_block = 2;
  int kernel = 3;
  int dense_width = 256;
  HeadKind head = HeadKind::Param;
  HGrid theta_grid;  // ThetaHead output support

  int blocks() const { return static_cast<int>(channels.size()); }
  int output_dim() const { return head == HeadKind::Param ? 2 : theta_grid.count; }

  std::pair<int, int> trunk_spatial() const {
    int h = input_ny, w = input_nx;
    for (int b = 0; b < blocks(); ++b) {
      h /= 2;
      w /= 2;
    }
    return {h, w};
  }
  int flatten_size() const {
    const auto [h, w] = trunk_spatial();
    return channels.back() * h * w;
  }
  void validate() const {
    if (channels.empty()) throw DomainError("network needs at least one block");
    if (kernel % 2 != 1 || kernel < 1) throw DomainError("kernel size must be odd");
    if (convs_per_block < 1) throw DomainError("need at least one convolution per block");
    const auto [h, w] = trunk_spatial();
    if (h < 1 || w < 1) throw DomainError("input too small for the number of pooling stages");
    if (dense_width < 1) throw DomainError("dense width must be positive");
    if (head == HeadKind::Theta) theta_grid.validate();
  }
};

// ---------------------------------------------------------------------------
// Flat parameter store with named tensor views

struct TensorInfo {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  Eigen::Index offset = 0;
  Eigen::Index size() const { return rows * cols; }
};

struct ParamLayout {
  std::vector<TensorInfo> tensors;
  Eigen::Index total = 0;

  Eigen::Index add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    tensors.push_back({std::move(name), rows, cols, total});
    total += rows * cols;
    return total;
  }
  const TensorInfo& find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw std::logic_error("unknown tensor " + name);
  }
};

inline ParamLayout build_layout(const NetworkSpec& spec) {
  spec.validate();
  ParamLayout lay;
  const int k = spec.kernel;
  int cin = 1;
  for (int b = 0; b < spec.blocks(); ++b) {
    const int cout = spec.channels[static_cast<std::size_t>(b)];
    for (int c = 0; c < spec.convs_per_block; ++c) {
      const int in_ch = c == 0 ? cin : cout;
      const std::string base = "block" + std::to_string(b) + ".conv" + std::to_string(c);
      lay.add(base + ".w", cout, static_cast<Eigen::Index>(in_ch) * k * k);
      lay.add(base + ".b", cout, 1);
    }
    if (b > 0) lay.add("block" + std::to_string(b) + ".skip.w", cout, cin);
    cin = cout;
  }
  lay.add("dense.w", spec.dense_width, spec.flatten_size());
  lay.add("dense.b", spec.dense_width, 1);
  lay.add("out.w", spec.output_dim(), spec.dense_width);
  lay.add("out.b", spec.output_dim(), 1);
  return lay;
}

using MatView = Eigen::Map<MatrixXd>;
using ConstMatView = Eigen::Map<const MatrixXd>;

inline ConstMatView view(const VectorXd& params, const TensorInfo& t) {
  return ConstMatView(params.data() + t.offset, t.rows, t.cols);
}
inline MatView view(VectorXd& params, const TensorInfo& t) {
  return MatView(params.data() + t.offset, t.rows, t.cols);
}

/// Fan-in scaled uniform initialization, seed-controlled.
inline VectorXd init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  const ParamLayout lay = build_layout(spec);
  VectorXd w(lay.total);
  for (std::size_t ti = 0; ti < lay.tensors.size(); ++ti) {
    const TensorInfo& t = lay.tensors[ti];
    Rng rng = substream(seed, 0xA11C, ti);
    MatView m = view(w, t);
    if (t.name.ends_with(".b")) {
      m.setZero();
      continue;
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(t.cols));
    for (Eigen::Index i = 0; i < t.rows; ++i)
      for (Eigen::Index j = 0; j < t.cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Layer primitives (feature maps stored channels x (H*W), position y*W + x)

namespace nn {

inline void im2col(const MatrixXd& x, int H, int W, int k, MatrixXd& col) {
  const int pad = (k - 1) / 2;
  const auto cin = x.rows();
  col.resize(cin * k * k, static_cast<Eigen::Index>(H) * W);
  for (Eigen::Index c = 0; c < cin; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (c * k + ky) * k + kx;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - pad;
          for (int xpos = 0; xpos < W; ++xpos) {
            const int sx = xpos + kx - pad;
            col(row, static_cast<Eigen::Index>(y) * W + xpos) =
                (sy >= 0 && sy < H && sx >= 0 && sx < W)
                    ? x(c, static_cast<Eigen::Index>(sy) * W + sx)
                    : 0.0;
          }
        }
      }
}

inline void col2im_add(const MatrixXd& dcol, int H, int W, int k, MatrixXd& dx) {
  const int pad = (k - 1) / 2;
  const auto cin = dx.rows();
  for (Eigen::Index c = 0; c < cin; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (c * k + ky) * k + kx;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          for (int xpos = 0; xpos < W; ++xpos) {
            const int sx = xpos + kx - pad;
            if (sx < 0 || sx >= W) continue;
            dx(c, static_cast<Eigen::Index>(sy) * W + sx) +=
                dcol(row, static_cast<Eigen::Index>(y) * W + xpos);
          }
        }
      }
}

inline void maxpool2(const MatrixXd& x, int H, int W, MatrixXd& out,
                     Eigen::MatrixX<Eigen::Index>& argmax) {
  const int Ho = H / 2, Wo = W / 2;
  out.resize(x.rows(), static_cast<Eigen::Index>(Ho) * Wo);
  argmax.resize(x.rows(), static_cast<Eigen::Index>(Ho) * Wo);
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        Eigen::Index best_idx = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx_ = 0; dx_ < 2; ++dx_) {
            const Eigen::Index idx = static_cast<Eigen::Index>(2 * oy + dy) * W + (2 * ox + dx_);
            if (x(c, idx) > best) {
              best = x(c, idx);
              best_idx = idx;
            }
          }
        out(c, static_cast<Eigen::Index>(oy) * Wo + ox) = best;
        argmax(c, static_cast<Eigen::Index>(oy) * Wo + ox) = best_idx;
      }
}

inline void maxpool2_backward(const MatrixXd& dout, const Eigen::MatrixX<Eigen::Index>& argmax,
                              MatrixXd& dx) {
  for (Eigen::Index c = 0; c < dout.rows(); ++c)
    for (Eigen::Index p = 0; p < dout.cols(); ++p) dx(c, argmax(c, p)) += dout(c, p);
}

/// Per-block forward state kept for the backward pass.
struct BlockCache {
  MatrixXd input;                       // cin x HW
  std::vector<MatrixXd> pre;            // conv pre-activations
  std::vector<MatrixXd> act;            // post-ReLU activations (last entry: post-skip ReLU)
  std::vector<MatrixXd> cols;           // im2col of each conv input
  MatrixXd skip;                        // projection output (blocks > 0)
  MatrixXd pooled;
  Eigen::MatrixX<Eigen::Index> argmax;
  int H = 0, W = 0;
};

struct TrunkCache {
  std::vector<BlockCache> blocks;
  VectorXd flat;
  VectorXd dense_pre;
  VectorXd dense_act;
};

}  // namespace nn

// ---------------------------------------------------------------------------
// Network

struct Network {
  NetworkSpec spec;
  ParamLayout layout;
  VectorXd params;

  static Network create(const NetworkSpec& spec, std::uint64_t seed) {
    Network n;
    n.spec = spec;
    n.layout = build_layout(spec);
    n.params = init_weights(spec, seed);
    return n;
  }
  static Network with_weights(const NetworkSpec& spec, VectorXd weights) {
    Network n;
    n.spec = spec;
    n.layout = build_layout(spec);
    if (weights.size() != n.layout.total) throw DomainError("weight vector has wrong length");
    n.params = std::move(weights);
    return n;
  }

  ConstMatView tensor(const std::string& name) const { return view(params, layout.find(name)); }

  /// Deterministic trunk: conv blocks, flatten, dense layer with ReLU.
  void forward_trunk(const VectorXd& field, nn::TrunkCache& cache) const {
    if (field.size() != static_cast<Eigen::Index>(spec.input_nx) * spec.input_ny)
      throw DomainError("field size does not match the network input");
    const int k = spec.kernel;
    cache.blocks.assign(static_cast<std::size_t>(spec.blocks()), {});
    MatrixXd x = Eigen::Map<const MatrixXd>(field.data(), 1, field.size());
    int H = spec.input_ny, W = spec.input_nx;
    for (int b = 0; b < spec.blocks(); ++b) {
      nn::BlockCache& bc = cache.blocks[static_cast<std::size_t>(b)];
      bc.input = x;
      bc.H = H;
      bc.W = W;
      bc.pre.resize(static_cast<std::size_t>(spec.convs_per_block));
      bc.act.resize(static_cast<std::size_t>(spec.convs_per_block));
      bc.cols.resize(static_cast<std::size_t>(spec.convs_per_block));
      MatrixXd cur = x;
      for (int c = 0; c < spec.convs_per_block; ++c) {
        const std::string base = "block" + std::to_string(b) + ".conv" + std::to_string(c);
        nn::im2col(cur, H, W, k, bc.cols[static_cast<std::size_t>(c)]);
        MatrixXd z = tensor(base + ".w") * bc.cols[static_cast<std::size_t>(c)];
        z.colwise() += tensor(base + ".b").col(0);
        bc.pre[static_cast<std::size_t>(c)] = z;
        if (c + 1 < spec.convs_per_block) {
          bc.act[static_cast<std::size_t>(c)] = z.cwiseMax(0.0);
          cur = bc.act[static_cast<std::size_t>(c)];
        } else {
          if (b > 0) {
            bc.skip = tensor("block" + std::to_string(b) + ".skip.w") * bc.input;
            z += bc.skip;
            bc.pre[static_cast<std::size_t>(c)] = z;  // post-skip pre-activation
          }
          bc.act[static_cast<std::size_t>(c)] = z.cwiseMax(0.0);
        }
      }
      nn::maxpool2(bc.act.back(), H, W, bc.pooled, bc.argmax);
      H /= 2;
      W /= 2;
      x = bc.pooled;
    }
    cache.flat = Eigen::Map<const VectorXd>(x.data(), x.size());
    cache.dense_pre = tensor("dense.w") * cache.flat + tensor("dense.b").col(0);
    cache.dense_act = cache.dense_pre.cwiseMax(0.0);
  }

  /// Raw head outputs for m latent draws (rows of `latents`, each of dense
  /// width). Latents multiply the dense activation elementwise.
  MatrixXd forward_head(const nn::TrunkCache& cache, const MatrixXd& latents) const {
    if (latents.cols() != spec.dense_width) throw DomainError("latent width mismatch");
    const auto wout = tensor("out.w");
    const auto bout = tensor("out.b");
    MatrixXd out(latents.rows(), spec.output_dim());
    for (Eigen::Index j = 0; j < latents.rows(); ++j) {
      const VectorXd u = cache.dense_act.cwiseProduct(latents.row(j).transpose());
      out.row(j) = (wout * u + bout.col(0)).transpose();
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Output transforms

/// Natural-scale samples from raw head outputs.
inline MatrixXd to_natural(const NetworkSpec& spec, const MatrixXd& raw) {
  MatrixXd out(raw.rows(), raw.cols());
  if (spec.head == HeadKind::Param) {
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      out(i, 0) = std::exp(raw(i, 0));
      out(i, 1) = 2.0 * sigmoid(raw(i, 1));
    }
  } else {
    for (Eigen::Index i = 0; i < raw.rows(); ++i)
      for (Eigen::Index j = 0; j < raw.cols(); ++j) out(i, j) = 1.0 + sigmoid(raw(i, j));
  }
  return out;
}

/// Internal (training) scale: log-lambda stays linear, sigmoid coordinates
/// stay in (0,1).
inline MatrixXd to_internal(const NetworkSpec& spec, const MatrixXd& raw) {
  MatrixXd out(raw.rows(), raw.cols());
  if (spec.head == HeadKind::Param) {
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      out(i, 0) = raw(i, 0);
      out(i, 1) = sigmoid(raw(i, 1));
    }
  } else {
    for (Eigen::Index i = 0; i < raw.rows(); ++i)
      for (Eigen::Index j = 0; j < raw.cols(); ++j) out(i, j) = sigmoid(raw(i, j));
  }
  return out;
}

/// Truth on the internal scale.
inline VectorXd internal_truth_params(const ParameterVector& p) {
  VectorXd t(2);
  t << std::log(p.lambda), p.nu / 2.0;
  return t;
}
inline VectorXd internal_truth_theta(const ThetaCurve& c) {
  VectorXd t(static_cast<Eigen::Index>(c.values.size()));
  for (std::size_t i = 0; i < c.values.size(); ++i) t[static_cast<Eigen::Index>(i)] = c.values[i] - 1.0;
  return t;
}

// ---------------------------------------------------------------------------
// Loss and gradients

namespace nn {

/// Energy-score value and gradient with respect to the internal-scale
/// samples. Gradient rows follow sample rows.
inline double energy_score_grad(const MatrixXd& samples, const VectorXd& truth,
                                MatrixXd& grad) {
  const Eigen::Index m = samples.rows();
  grad.setZero(m, samples.cols());
  std::vector<double> to_truth(static_cast<std::size_t>(m));
  const double md = static_cast<double>(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const VectorXd d = samples.row(j).transpose() - truth;
    const double n = d.norm();
    to_truth[static_cast<std::size_t>(j)] = n;
    if (n > 0.0) grad.row(j) += (d / (n * md)).transpose();
  }
  std::vector<double> between;
  between.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index l = j + 1; l < m; ++l) {
      const VectorXd d = samples.row(j).transpose() - samples.row(l).transpose();
      const double n = d.norm();
      between.push_back(n);
      if (n > 0.0) {
        const VectorXd u = d / (n * md * (md - 1.0));
        grad.row(j) -= u.transpose();
        grad.row(l) += u.transpose();
      }
    }
  return pairwise_sum(to_truth) / md - pairwise_sum(between) / (md * (md - 1.0));
}

/// Squared-error value and gradient (point network with one sample).
inline double squared_error_grad(const MatrixXd& samples, const VectorXd& truth,
                                 MatrixXd& grad) {
  grad.resize(samples.rows(), samples.cols());
  double acc = 0.0;
  for (Eigen::Index j = 0; j < samples.rows(); ++j) {
    const VectorXd d = samples.row(j).transpose() - truth;
    acc += d.squaredNorm();
    grad.row(j) = (2.0 * d / static_cast<double>(samples.rows())).transpose();
  }
  return acc / static_cast<double>(samples.rows());
}

}  // namespace nn

/// Loss of one example with externally supplied latents; when `grad_out` is
/// non-null the full parameter gradient is accumulated into it.
inline double example_loss(const Network& net, const VectorXd& field, const VectorXd& truth,
                           const MatrixXd& latents, LossKind loss, VectorXd* grad_out) {
  nn::TrunkCache cache;
  net.forward_trunk(field, cache);
  const MatrixXd raw = net.forward_head(cache, latents);
  const MatrixXd internal = to_internal(net.spec, raw);
  MatrixXd dl_dinternal;
  const double value = loss == LossKind::EnergyScore
                           ? nn::energy_score_grad(internal, truth, dl_dinternal)
                           : nn::squared_error_grad(internal, truth, dl_dinternal);
  if (grad_out == nullptr) return value;
  VectorXd& g = *grad_out;
  if (g.size() != net.params.size()) g.setZero(net.params.size());

  const NetworkSpec& spec = net.spec;
  const ParamLayout& lay = net.layout;
  // Chain through the output transforms: sigmoid coordinates scale by s(1-s).
  MatrixXd dl_draw = dl_dinternal;
  if (spec.head == HeadKind::Param) {
    for (Eigen::Index j = 0; j < raw.rows(); ++j) {
      const double s = sigmoid(raw(j, 1));
      dl_draw(j, 1) *= s * (1.0 - s);
    }
  } else {
    for (Eigen::Index j = 0; j < raw.rows(); ++j)
      for (Eigen::Index c = 0; c < raw.cols(); ++c) {
        const double s = sigmoid(raw(j, c));
        dl_draw(j, c) *= s * (1.0 - s);
      }
  }

  const auto wout_info = lay.find("out.w");
  const auto bout_info = lay.find("out.b");
  const auto wout = view(net.params, wout_info);
  MatView dwout = view(g, wout_info);
  MatView dbout = view(g, bout_info);
  VectorXd ddense_act = VectorXd::Zero(spec.dense_width);
  for (Eigen::Index j = 0; j < latents.rows(); ++j) {
    const VectorXd u = cache.dense_act.cwiseProduct(latents.row(j).transpose());
    const VectorXd doj = dl_draw.row(j).transpose();
    dwout.noalias() += doj * u.transpose();
    dbout.col(0) += doj;
    const VectorXd du = wout.transpose() * doj;
    ddense_act += du.cwiseProduct(latents.row(j).transpose());
  }

  // Dense layer
  const VectorXd dense_mask = (cache.dense_pre.array() > 0.0).cast<double>();
  VectorXd ddense_pre = ddense_act.cwiseProduct(dense_mask);
  view(g, lay.find("dense.w")).noalias() += ddense_pre * cache.flat.transpose();
  view(g, lay.find("dense.b")).col(0) += ddense_pre;
  VectorXd dflat = view(net.params, lay.find("dense.w")).transpose() * ddense_pre;

  // Trunk, back to front
  const auto [th, tw] = spec.trunk_spatial();
  MatrixXd dx = Eigen::Map<const MatrixXd>(dflat.data(), spec.channels.back(),
                                           static_cast<Eigen::Index>(th) * tw);
  for (int b = spec.blocks() - 1; b >= 0; --b) {
    const nn::BlockCache& bc = cache.blocks[static_cast<std::size_t>(b)];
    MatrixXd dact = MatrixXd::Zero(bc.act.back().rows(), bc.act.back().cols());
    nn::maxpool2_backward(dx, bc.argmax, dact);
    MatrixXd dinput_extra;  // gradient reaching the block input through the skip
    for (int c = spec.convs_per_block - 1; c >= 0; --c) {
      const std::string base = "block" + std::to_string(b) + ".conv" + std::to_string(c);
      // ReLU mask of this conv's (post-skip) pre-activation
      const MatrixXd mask = (bc.pre[static_cast<std::size_t>(c)].array() > 0.0).cast<double>();
      MatrixXd dz = dact.cwiseProduct(mask);
      if (c == spec.convs_per_block - 1 && b > 0) {
        // Residual: the same dz flows into the projection path.
        view(g, lay.find("block" + std::to_string(b) + ".skip.w")).noalias() +=
            dz * bc.input.transpose();
        dinput_extra =
            view(net.params, lay.find("block" + std::to_string(b) + ".skip.w")).transpose() * dz;
      }
      view(g, lay.find(base + ".w")).noalias() +=
          dz * bc.cols[static_cast<std::size_t>(c)].transpose();
      view(g, lay.find(base + ".b")).col(0) += dz.rowwise().sum();
      const MatrixXd dcol = view(net.params, lay.find(base + ".w")).transpose() * dz;
      const Eigen::Index cin_rows = c == 0 ? bc.input.rows() : bc.act[static_cast<std::size_t>(c - 1)].rows();
      MatrixXd dprev = MatrixXd::Zero(cin_rows, static_cast<Eigen::Index>(bc.H) * bc.W);
      nn::col2im_add(dcol, bc.H, bc.W, spec.kernel, dprev);
      dact = std::move(dprev);
    }
    if (dinput_extra.size() > 0) dact += dinput_extra;
    dx = std::move(dact);
  }
  return value;
}

/// m latent rows ~ N(1, I) of dense width; the ones matrix when noise is off.
inline MatrixXd draw_latents(int m, int width, bool noise, std::uint64_t seed) {
  if (!noise) return MatrixXd::Ones(m, width);
  Rng rng(seed);
  MatrixXd l(m, width);
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    for (Eigen::Index j = 0; j < l.cols(); ++j) l(i, j) = 1.0 + rng.normal();
  return l;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 7e-4;       // RMSProp
  double rmsprop_alpha = 0.99;
  double rmsprop_eps = 1e-8;
  int batch_size = 100;
  int m_train = 50;
  int m_predict = 500;
  double scheduler_factor = 0.5;     // reduce-on-plateau on validation score
  int scheduler_patience = 5;
  int early_stop_patience = 10;
  int max_epochs = 200;
  bool augment = true;
  bool noise_layer = true;
  LossKind loss = LossKind::EnergyScore;
  std::uint64_t seed = 1;
  int n_threads = 4;                  // fixed count; results depend on it

  json to_json() const {
    return json{{"learning_rate", learning_rate},
                {"rmsprop_alpha", rmsprop_alpha},
                {"rmsprop_eps", rmsprop_eps},
                {"batch_size", batch_size},
                {"m_train", m_train},
                {"m_predict", m_predict},
                {"scheduler_factor", scheduler_factor},
                {"scheduler_patience", scheduler_patience},
                {"early_stop_patience", early_stop_patience},
                {"max_epochs", max_epochs},
                {"augment", augment},
                {"noise_layer", noise_layer},
                {"loss", loss == LossKind::EnergyScore ? "energy-score" : "squared-error"},
                {"seed", seed},
                {"n_threads", n_threads}};
  }
  static TrainConfig from_json(const json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.rmsprop_alpha = j.value("rmsprop_alpha", c.rmsprop_alpha);
    c.rmsprop_eps = j.value("rmsprop_eps", c.rmsprop_eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.m_train = j.value("m_train", c.m_train);
    c.m_predict = j.value("m_predict", c.m_predict);
    c.scheduler_factor = j.value("scheduler_factor", c.scheduler_factor);
    c.scheduler_patience = j.value("scheduler_patience", c.scheduler_patience);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.augment = j.value("augment", c.augment);
    c.noise_layer = j.value("noise_layer", c.noise_layer);
    c.loss = j.value("loss", "energy-score") == std::string("energy-score")
                 ? LossKind::EnergyScore
                 : LossKind::SquaredError;
    c.seed = j.value("seed", c.seed);
    c.n_threads = j.value("n_threads", c.n_threads);
    return c;
  }
};

struct EpochLog {
  int epoch = 0;
  double train_score = 0.0;
  double val_score = 0.0;
  double lr = 0.0;
};

struct TrainingDivergence : std::runtime_error {
  int epoch, batch;
  std::uint64_t seed;
  TrainingDivergence(int e, int b, std::uint64_t s)
      : std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(e) +
                           ", batch " + std::to_string(b) + ", seed " + std::to_string(s)),
        epoch(e), batch(b), seed(s) {}
};

struct TrainedModel {
  NetworkSpec spec;
  TrainConfig config;
  VectorXd weights;        // best validation weights
  std::vector<EpochLog> log;
  std::string dataset_hash;

  // Resumable optimizer / scheduler state (weights at the last epoch).
  VectorXd last_weights;
  VectorXd rms_cache;
  int epochs_done = 0;
  double lr = 0.0;
  double best_val = std::numeric_limits<double>::infinity();
  int plateau = 0;
  int stall = 0;

  Network net() const { return Network::with_weights(spec, weights); }
};

inline void write_training_log_csv(const std::filesystem::path& path,
                                   const std::vector<EpochLog>& log) {
  std::ofstream os(path);
  os << "epoch,train_es,val_es,lr\n";
  os.precision(12);
  for (const auto& e : log)
    os << e.epoch << "," << e.train_score << "," << e.val_score << "," << e.lr << "\n";
}

namespace nn {

/// Mean loss over a slice of examples, gradients (optional) accumulated per
/// fixed-size thread chunk and reduced in chunk order.
inline double batch_loss(const Network& net, const TrainingSet& data,
                         const std::vector<int>& indices,
                         const std::vector<VectorXd>& truths, const TrainConfig& cfg,
                         int epoch, int batch_index, bool augment_now, VectorXd* grad) {
  const int n = static_cast<int>(indices.size());
  const int threads = std::max(1, std::min(cfg.n_threads, n));
  const int chunk = (n + threads - 1) / threads;
  std::vector<VectorXd> grads(grad != nullptr ? static_cast<std::size_t>(threads) : 0);
  std::vector<double> losses(static_cast<std::size_t>(threads), 0.0);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        VectorXd* g = nullptr;
        if (grad != nullptr) {
          grads[static_cast<std::size_t>(t)].setZero(net.params.size());
          g = &grads[static_cast<std::size_t>(t)];
        }
        std::vector<double> local;
        for (int i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) {
          const int idx = indices[static_cast<std::size_t>(i)];
          VectorXd field = data.fields[static_cast<std::size_t>(idx)];
          if (augment_now) {
            Rng arng = substream(cfg.seed, 0xAA6, static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(idx));
            const AugmentMask mask = draw_augment_mask(arng);
            field = apply_augment(field, data.grid.nx, data.grid.ny, mask);
          }
          const std::uint64_t lseed =
              substream_seed(cfg.seed, 0x1A7E47,
                             static_cast<std::uint64_t>(epoch) * 1000003ULL +
                                 static_cast<std::uint64_t>(batch_index),
                             static_cast<std::uint64_t>(idx));
          const MatrixXd latents =
              draw_latents(cfg.m_train, net.spec.dense_width, cfg.noise_layer, lseed);
          local.push_back(example_loss(net, field, truths[static_cast<std::size_t>(idx)],
                                       latents, cfg.loss, g));
        }
        losses[static_cast<std::size_t>(t)] = pairwise_sum(local);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  double total = 0.0;
  for (int t = 0; t < threads; ++t) total += losses[static_cast<std::size_t>(t)];
  if (grad != nullptr) {
    grad->setZero(net.params.size());
    for (int t = 0; t < threads; ++t) *grad += grads[static_cast<std::size_t>(t)];
    *grad /= static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

}  // namespace nn

/// Truth vectors on the internal scale for every example.
inline std::vector<VectorXd> internal_truths(const TrainingSet& data, const NetworkSpec& spec) {
  std::vector<VectorXd> t(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (spec.head == HeadKind::Param) {
      t[i] = internal_truth_params(data.params[i]);
    } else {
      t[i] = internal_truth_theta(theta_curve(data.params[i], spec.theta_grid));
    }
  }
  return t;
}

/// Mini-batch RMSProp on the chosen loss; returns best-validation weights
/// together with the full per-epoch log and resumable optimizer state.
inline TrainedModel train(const TrainingSet& data, const TrainConfig& cfg, HeadKind head,
                          const TrainedModel* resume = nullptr,
                          const std::string& dataset_hash = "") {
  if (data.size() == 0) throw DomainError("training set is empty");
  if (cfg.m_train < 2 && cfg.loss == LossKind::EnergyScore)
    throw DomainError("energy-score training needs m_train >= 2");
  NetworkSpec spec;
  if (resume != nullptr) {
    spec = resume->spec;
  } else {
    spec.input_nx = data.grid.nx;
    spec.input_ny = data.grid.ny;
    spec.head = head;
  }
  spec.validate();

  TrainedModel model;
  model.spec = spec;
  model.config = cfg;
  model.dataset_hash = dataset_hash;
  Network net = resume != nullptr ? Network::with_weights(spec, resume->last_weights)
                                  : Network::create(spec, cfg.seed);
  VectorXd rms = resume != nullptr ? resume->rms_cache : VectorXd::Zero(net.params.size());
  double lr = resume != nullptr ? resume->lr : cfg.learning_rate;
  model.best_val = resume != nullptr ? resume->best_val : std::numeric_limits<double>::infinity();
  model.plateau = resume != nullptr ? resume->plateau : 0;
  model.stall = resume != nullptr ? resume->stall : 0;
  model.weights = resume != nullptr ? resume->weights : net.params;
  if (resume != nullptr) model.log = resume->log;
  const int first_epoch = resume != nullptr ? resume->epochs_done : 0;

  const std::vector<VectorXd> truths = internal_truths(data, spec);
  const int n_train = static_cast<int>(data.train_count());
  const int n_val = static_cast<int>(data.size()) - n_train;
  std::vector<int> train_idx(static_cast<std::size_t>(n_train));
  for (int i = 0; i < n_train; ++i) train_idx[static_cast<std::size_t>(i)] = i;
  std::vector<int> val_idx(static_cast<std::size_t>(n_val));
  for (int i = 0; i < n_val; ++i) val_idx[static_cast<std::size_t>(i)] = n_train + i;

  VectorXd grad(net.params.size());
  for (int epoch = first_epoch; epoch < first_epoch + cfg.max_epochs; ++epoch) {
    // Seed-derived batch composition.
    std::vector<int> order = train_idx;
    Rng shuffle_rng = substream(cfg.seed, 0x5F0FFE, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.integer(i))]);

    std::vector<double> batch_losses;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      const double loss = nn::batch_loss(net, data, batch, truths, cfg, epoch, batch_index,
                                         cfg.augment, &grad);
      if (!std::isfinite(loss)) throw TrainingDivergence(epoch, batch_index, cfg.seed);
      batch_losses.push_back(loss);
      rms = cfg.rmsprop_alpha * rms.array() + (1.0 - cfg.rmsprop_alpha) * grad.array().square();
      net.params.array() -= lr * grad.array() / (rms.array().sqrt() + cfg.rmsprop_eps);
      ++batch_index;
    }

    double val = 0.0;
    if (n_val > 0) {
      TrainConfig vcfg = cfg;
      vcfg.seed = substream_seed(cfg.seed, 0x7A1);  // fixed latents across epochs
      val = nn::batch_loss(net, data, val_idx, truths, vcfg, 0, 0, false, nullptr);
    } else {
      val = pairwise_sum(batch_losses) / static_cast<double>(batch_losses.size());
    }
    model.log.push_back({epoch, pairwise_sum(batch_losses) / static_cast<double>(batch_losses.size()),
                         val, lr});

    if (val < model.best_val - 1e-12) {
      model.best_val = val;
      model.weights = net.params;
      model.plateau = 0;
      model.stall = 0;
    } else {
      ++model.plateau;
      ++model.stall;
      if (model.plateau >= cfg.scheduler_patience) {
        lr *= cfg.scheduler_factor;
        model.plateau = 0;
      }
      if (model.stall >= cfg.early_stop_patience) {
        model.epochs_done = epoch + 1;
        break;
      }
    }
    model.epochs_done = epoch + 1;
  }
  model.last_weights = net.params;
  model.rms_cache = rms;
  model.lr = lr;
  return model;
}

// ---------------------------------------------------------------------------
// Inference

/// One forward pass: the trunk once, then m latent draws through the noise
/// and output layers. Deterministic in (weights, field, seed).
inline PosteriorSample forward(const TrainedModel& model, const FieldSample& field, int m,
                               std::uint64_t seed) {
  if (m < 2) throw DomainError("posterior sampling needs m >= 2");
  if (field.grid.nx != model.spec.input_nx || field.grid.ny != model.spec.input_ny)
    throw DomainError("field grid does not match the model input");
  const Network net = model.net();
  nn::TrunkCache cache;
  net.forward_trunk(field.values, cache);
  const MatrixXd latents =
      draw_latents(m, model.spec.dense_width, model.config.noise_layer, seed);
  const MatrixXd raw = net.forward_head(cache, latents);
  PosteriorSample ps;
  ps.kind = model.spec.head == HeadKind::Param ? PosteriorSample::Kind::Params
                                               : PosteriorSample::Kind::Theta;
  ps.draws = to_natural(model.spec, raw);
  ps.grid = model.spec.theta_grid;
  ps.family = field.params.family;
  return ps;
}

/// Pointwise functional of a theta posterior followed by ascending sort
/// (functional first, then sort). Idempotent; the output is a permutation of
/// the functional values and a valid nondecreasing curve.
struct MonotoneFunctional {
  enum class Kind { Mean, Quantile };
  Kind kind = Kind::Mean;
  double q = 0.5;
  static MonotoneFunctional mean() { return {Kind::Mean, 0.0}; }
  static MonotoneFunctional quantile(double q) { return {Kind::Quantile, q}; }
};

inline ThetaCurve enforce_monotone(const PosteriorSample& posterior,
                                   const MonotoneFunctional& functional) {
  if (posterior.kind != PosteriorSample::Kind::Theta)
    throw DomainError("enforce_monotone expects a theta posterior");
  ThetaCurve c = functional.kind == MonotoneFunctional::Kind::Mean
                     ? posterior.mean_curve()
                     : posterior.quantile_curve(functional.q);
  std::sort(c.values.begin(), c.values.end());
  return c;
}

struct PredictResult {
  PosteriorSample posterior;
  // ParamHead summaries
  double lambda_mean = 0.0, nu_mean = 0.0;
  IntervalEstimate lambda_interval, nu_interval;
  // ThetaHead summaries (monotone-sorted)
  ThetaCurve mean_curve;
  ThetaCurve lower_curve, upper_curve;
};

/// Posterior draw plus derived mean and central 95% interval estimates;
/// theta curves are monotone-sorted per functional.
inline PredictResult predict(const TrainedModel& model, const FieldSample& field,
                             std::uint64_t seed, double alpha = 0.05) {
  PredictResult r;
  r.posterior = forward(model, field, model.config.m_predict, seed);
  if (r.posterior.kind == PosteriorSample::Kind::Params) {
    std::vector<double> lam(static_cast<std::size_t>(r.posterior.m()));
    std::vector<double> nu(static_cast<std::size_t>(r.posterior.m()));
    for (Eigen::Index i = 0; i < r.posterior.m(); ++i) {
      lam[static_cast<std::size_t>(i)] = r.posterior.draws(i, 0);
      nu[static_cast<std::size_t>(i)] = r.posterior.draws(i, 1);
    }
    r.lambda_mean = r.posterior.draws.col(0).mean();
    r.nu_mean = r.posterior.draws.col(1).mean();
    r.lambda_interval = interval_from_samples(lam, alpha);
    r.nu_interval = interval_from_samples(nu, alpha);
  } else {
    r.mean_curve = enforce_monotone(r.posterior, MonotoneFunctional::mean());
    r.lower_curve = enforce_monotone(r.posterior, MonotoneFunctional::quantile(alpha / 2.0));
    r.upper_curve = enforce_monotone(r.posterior, MonotoneFunctional::quantile(1.0 - alpha / 2.0));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoint container: JSON header + named little-endian weight tensors

inline void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model) {
  json spec_j{{"input_nx", model.spec.input_nx},
              {"input_ny", model.spec.input_ny},
              {"channels", model.spec.channels},
              {"convs_per_block", model.spec.convs_per_block},
              {"kernel", model.spec.kernel},
              {"dense_width", model.spec.dense_width},
              {"head", head_name(model.spec.head)},
              {"theta_grid", {{"dh", model.spec.theta_grid.dh}, {"count", model.spec.theta_grid.count}}}};
  json log_j = json::array();
  for (const auto& e : model.log)
    log_j.push_back({{"epoch", e.epoch}, {"train", e.train_score}, {"val", e.val_score}, {"lr", e.lr}});
  const ParamLayout lay = build_layout(model.spec);
  json tensors_j = json::array();
  for (const auto& t : lay.tensors)
    tensors_j.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", t.offset}});
  json header{{"format", "maxstable-checkpoint"},
              {"version", 1},
              {"spec", spec_j},
              {"config", model.config.to_json()},
              {"dataset_hash", model.dataset_hash},
              {"epochs_done", model.epochs_done},
              {"lr", model.lr},
              {"best_val", model.best_val},
              {"plateau", model.plateau},
              {"stall", model.stall},
              {"log", log_j},
              {"tensors", tensors_j},
              {"n_params", lay.total},
              {"dtype", "float64"},
              {"byte_order", "little-endian"}};
  const std::string hs = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write("MSNC0001", 8);
  const std::uint64_t len = hs.size();
  os.write(reinterpret_cast<const char*>(&len), 8);
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  auto dump_vec = [&os](const VectorXd& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(static_cast<std::size_t>(v.size()) * sizeof(double)));
  };
  dump_vec(model.weights);
  dump_vec(model.last_weights);
  dump_vec(model.rms_cache);
}

inline TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "MSNC0001", 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 8);
  std::string hs(len, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(len));
  const json header = json::parse(hs);
  TrainedModel m;
  const json& spec_j = header.at("spec");
  m.spec.input_nx = spec_j.at("input_nx").get<int>();
  m.spec.input_ny = spec_j.at("input_ny").get<int>();
  m.spec.channels = spec_j.at("channels").get<std::vector<int>>();
  m.spec.convs_per_block = spec_j.at("convs_per_block").get<int>();
  m.spec.kernel = spec_j.at("kernel").get<int>();
  m.spec.dense_width = spec_j.at("dense_width").get<int>();
  m.spec.head = head_from_name(spec_j.at("head").get<std::string>());
  m.spec.theta_grid.dh = spec_j.at("theta_grid").at("dh").get<double>();
  m.spec.theta_grid.count = spec_j.at("theta_grid").at("count").get<int>();
  m.config = TrainConfig::from_json(header.at("config"));
  m.dataset_hash = header.value("dataset_hash", "");
  m.epochs_done = header.at("epochs_done").get<int>();
  m.lr = header.at("lr").get<double>();
  m.best_val = header.at("best_val").get<double>();
  m.plateau = header.at("plateau").get<int>();
  m.stall = header.at("stall").get<int>();
  for (const auto& e : header.at("log"))
    m.log.push_back({e.at("epoch").get<int>(), e.at("train").get<double>(),
                     e.at("val").get<double>(), e.at("lr").get<double>()});
  const auto n = header.at("n_params").get<Eigen::Index>();
  auto read_vec = [&is, n]() {
    VectorXd v(n);
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(static_cast<std::size_t>(n) * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint truncated");
    return v;
  };
  m.weights = read_vec();
  m.last_weights = read_vec();
  m.rms_cache = read_vec();
  return m;
}

}  // namespace maxstable
