#pragma once

// A small fully connected score network s(x, tau y, t) with a learned null
// token for the masked branch, trained by manual backpropagation.
//
// Inputs are [x, e, time features] where e = E y + c when the guidance is
// kept and e = null_token when it is masked. The output head is divided by
// sigma_t, so the trunk predicts a quantity of unit scale, and the result is
// optionally clamped to M_t.

#include "cdiff/common.hpp"
#include "cdiff/schedule.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace cdiff {

enum class GuidanceMask { null, id };
enum class Activation { relu, softplus, silu };
enum class ClampMode { sigma2, sigma, none };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    case Activation::silu: return "silu";
  }
  return "?";
}

inline std::string to_string(ClampMode c) {
  switch (c) {
    case ClampMode::sigma2: return "sigma2";
    case ClampMode::sigma: return "sigma";
    case ClampMode::none: return "none";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  if (s == "silu") return Activation::silu;
  throw precondition_error("unknown activation: " + s);
}

inline ClampMode clamp_mode_from_string(const std::string& s) {
  if (s == "sigma2") return ClampMode::sigma2;
  if (s == "sigma") return ClampMode::sigma;
  if (s == "none") return ClampMode::none;
  throw precondition_error("unknown clamp mode: " + s);
}

struct ScoreNetConfig {
  int d = 1;
  int d_y = 1;
  int width = 64;
  int depth = 2;
  Activation activation = Activation::silu;
  ClampMode clamp = ClampMode::sigma2;
  double clamp_c = 3.0;
  double clamp_N = 16.0;  // M_t = c sqrt(log N) / sigma_t^{1 or 2}
  int embed_dim = 4;
  int time_features = 6;  // frequencies; each gives a sine and a cosine
  double t0 = 0.01;
  double T = 5.0;

  void validate() const {
    require(d >= 1 && d_y >= 0, "ScoreNetConfig: bad dimensions");
    require(width >= 1 && depth >= 1, "ScoreNetConfig: width and depth must be at least 1");
    require(clamp == ClampMode::none || (clamp_c > 0 && clamp_N > 1),
            "ScoreNetConfig: clamp constant must be positive");
    require(embed_dim >= 1 && time_features >= 0, "ScoreNetConfig: bad feature sizes");
    require(t0 > 0 && T > t0, "ScoreNetConfig: need 0 < t0 < T");
  }

  int input_dim() const { return d + embed_dim + 1 + 2 * time_features; }
};

inline nlohmann::json to_json(const ScoreNetConfig& c) {
  return {{"d", c.d},           {"d_y", c.d_y},
          {"width", c.width},   {"depth", c.depth},
          {"activation", to_string(c.activation)},
          {"clamp", to_string(c.clamp)},
          {"clamp_c", c.clamp_c}, {"clamp_N", c.clamp_N},
          {"embed_dim", c.embed_dim}, {"time_features", c.time_features},
          {"t0", c.t0},         {"T", c.T}};
}

inline ScoreNetConfig score_net_config_from_json(const nlohmann::json& j, ScoreNetConfig c = {}) {
  c.d = j.value("d", c.d);
  c.d_y = j.value("d_y", c.d_y);
  c.width = j.value("width", c.width);
  c.depth = j.value("depth", c.depth);
  if (j.contains("activation")) c.activation = activation_from_string(j["activation"]);
  if (j.contains("clamp")) c.clamp = clamp_mode_from_string(j["clamp"]);
  c.clamp_c = j.value("clamp_c", c.clamp_c);
  c.clamp_N = j.value("clamp_N", c.clamp_N);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.time_features = j.value("time_features", c.time_features);
  c.t0 = j.value("t0", c.t0);
  c.T = j.value("T", c.T);
  return c;
}

/// One minibatch in column layout.
struct NetBatch {
  Mat x;                     // d x B
  Mat y;                     // d_y x B (ignored where masked)
  std::vector<char> masked;  // 1 = null guidance
  Vec t;                     // B
  Mat target;                // d x B
};

class ScoreNet {
 public:
  struct Tensor {
    std::string name;
    Mat value;
  };

  ScoreNet(const ScoreNetConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(init_seed);
    auto glorot = [&](int rows, int cols) {
      const double a = std::sqrt(6.0 / (rows + cols));
      Mat m(rows, cols);
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-a, a);
      return m;
    };
    params_.push_back({"embed.weight", glorot(cfg_.embed_dim, std::max(cfg_.d_y, 1))});
    if (cfg_.d_y == 0) params_.back().value.setZero();
    params_.push_back({"embed.bias", Mat::Zero(cfg_.embed_dim, 1)});
    params_.push_back({"embed.null_token", Mat::Zero(cfg_.embed_dim, 1)});
    int in = cfg_.input_dim();
    for (int l = 0; l < cfg_.depth; ++l) {
      params_.push_back({"hidden" + std::to_string(l) + ".weight", glorot(cfg_.width, in)});
      params_.push_back({"hidden" + std::to_string(l) + ".bias", Mat::Zero(cfg_.width, 1)});
      in = cfg_.width;
    }
    params_.push_back({"head.weight", Mat::Zero(cfg_.d, cfg_.width)});
    params_.push_back({"head.bias", Mat::Zero(cfg_.d, 1)});
  }

  const ScoreNetConfig& config() const { return cfg_; }
  std::vector<Tensor>& tensors() { return params_; }
  const std::vector<Tensor>& tensors() const { return params_; }

  /// Bound M_t on the output, or +inf when clamping is off.
  double clamp_bound(double t) const {
    const double s = alpha_sigma(t).sigma;
    const double base = cfg_.clamp_c * std::sqrt(std::log(cfg_.clamp_N));
    switch (cfg_.clamp) {
      case ClampMode::sigma2: return base / (s * s);
      case ClampMode::sigma: return base / s;
      case ClampMode::none: break;
    }
    return std::numeric_limits<double>::infinity();
  }

  /// s(x, tau y, t). With mask = null the y argument must be empty.
  Vec forward(const Vec& x, GuidanceMask mask, const Vec& y, double t) const {
    require(x.size() == cfg_.d, "ScoreNet: x has wrong dimension");
    require(std::isfinite(t) && t >= cfg_.t0 && t <= cfg_.T, "ScoreNet: t outside [t0, T]");
    if (mask == GuidanceMask::id)
      require(y.size() == cfg_.d_y, "ScoreNet: y has wrong dimension");
    else
      require(y.size() == 0, "ScoreNet: y must be absent under the null mask");
    NetBatch b;
    b.x = x;
    b.y = mask == GuidanceMask::id ? Mat(y) : Mat::Zero(cfg_.d_y, 1);
    b.masked = {static_cast<char>(mask == GuidanceMask::null)};
    b.t = Vec::Constant(1, t);
    Cache c;
    return run(b, c).col(0);
  }

  /// Column-wise forward at a shared (mask, y, t); column j equals forward(X.col(j), ...).
  Mat forward_batch(const Mat& X, GuidanceMask mask, const Vec& y, double t) const {
    require(X.rows() == cfg_.d, "ScoreNet: x has wrong dimension");
    require(std::isfinite(t) && t >= cfg_.t0 && t <= cfg_.T, "ScoreNet: t outside [t0, T]");
    if (mask == GuidanceMask::id)
      require(y.size() == cfg_.d_y, "ScoreNet: y has wrong dimension");
    else
      require(y.size() == 0, "ScoreNet: y must be absent under the null mask");
    NetBatch b;
    b.x = X;
    b.y = mask == GuidanceMask::id ? Mat(y.replicate(1, X.cols())) : Mat::Zero(cfg_.d_y, X.cols());
    b.masked.assign(static_cast<std::size_t>(X.cols()), static_cast<char>(mask == GuidanceMask::null));
    b.t = Vec::Constant(X.cols(), t);
    Cache c;
    return run(b, c);
  }

  Vec operator()(const Vec& x, const Vec& y, double t) const {
    return forward(x, GuidanceMask::id, y, t);
  }
  Vec unconditional(const Vec& x, double t) const { return forward(x, GuidanceMask::null, Vec(0), t); }

  /// Mean over the batch of |s - target|^2; fills gradients when asked.
  double loss_and_grad(const NetBatch& b, std::vector<Mat>* grad) const {
    Cache c;
    const Mat s = run(b, c);
    const Eigen::Index B = b.x.cols();
    const Mat diff = s - b.target;
    const double loss = diff.squaredNorm() / static_cast<double>(B);
    if (!grad) return loss;

    grad->assign(params_.size(), Mat());
    for (std::size_t i = 0; i < params_.size(); ++i)
      (*grad)[i] = Mat::Zero(params_[i].value.rows(), params_[i].value.cols());

    // d loss / d head output, through the 1/sigma scaling and the clamp.
    Mat g = (2.0 / static_cast<double>(B)) * diff;
    for (Eigen::Index j = 0; j < B; ++j) {
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        if (c.clamped(i, j)) g(i, j) = 0.0;
      g.col(j) /= c.sigma[j];
    }
    const std::size_t head = params_.size() - 2;
    (*grad)[head] = g * c.act.back().transpose();
    (*grad)[head + 1] = g.rowwise().sum();
    Mat back = params_[head].value.transpose() * g;
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      const Mat dz = back.cwiseProduct(activation_grad(c.pre[l]));
      const std::size_t wi = 3 + 2 * static_cast<std::size_t>(l);
      (*grad)[wi] = dz * c.act[l].transpose();
      (*grad)[wi + 1] = dz.rowwise().sum();
      back = params_[wi].value.transpose() * dz;
    }
    // back now holds d loss / d features; rows [d, d + embed_dim) are e.
    const Mat ge = back.middleRows(cfg_.d, cfg_.embed_dim);
    for (Eigen::Index j = 0; j < B; ++j) {
      if (b.masked[j]) {
        (*grad)[2] += ge.col(j);
      } else {
        if (cfg_.d_y > 0) (*grad)[0] += ge.col(j) * b.y.col(j).transpose();
        (*grad)[1] += ge.col(j);
      }
    }
    return loss;
  }

  double max_abs_parameter() const {
    double m = 0.0;
    for (const auto& p : params_) m = std::max(m, p.value.cwiseAbs().maxCoeff());
    return m;
  }

  std::size_t nonzero_parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>((p.value.array() != 0.0).count());
    return n;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  // -------------------------------------------------------------------------
  // Flat weight format, little-endian throughout:
  //   "CDIFFNET" | u32 version | u32 len | config JSON | u32 count |
  //   per tensor: u32 len | name | u32 rank (=2) | u64 rows | u64 cols | f64 data (row-major)

  void save(std::ostream& os) const {
    os.write("CDIFFNET", 8);
    put_u32(os, 1);
    const std::string cj = to_json(cfg_).dump();
    put_u32(os, static_cast<std::uint32_t>(cj.size()));
    os.write(cj.data(), static_cast<std::streamsize>(cj.size()));
    put_u32(os, static_cast<std::uint32_t>(params_.size()));
    for (const auto& p : params_) {
      put_u32(os, static_cast<std::uint32_t>(p.name.size()));
      os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      put_u32(os, 2);
      put_u64(os, static_cast<std::uint64_t>(p.value.rows()));
      put_u64(os, static_cast<std::uint64_t>(p.value.cols()));
      for (Eigen::Index i = 0; i < p.value.rows(); ++i)
        for (Eigen::Index j = 0; j < p.value.cols(); ++j) put_u64(os, std::bit_cast<std::uint64_t>(p.value(i, j)));
    }
  }

  static ScoreNet load(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    require(is && std::memcmp(magic, "CDIFFNET", 8) == 0, "weights: bad magic");
    require(get_u32(is) == 1, "weights: unsupported version");
    std::string cj(get_u32(is), '\0');
    is.read(cj.data(), static_cast<std::streamsize>(cj.size()));
    ScoreNet net(score_net_config_from_json(nlohmann::json::parse(cj)), 0);
    const std::uint32_t count = get_u32(is);
    require(count == net.params_.size(), "weights: tensor count mismatch");
    for (auto& p : net.params_) {
      std::string name(get_u32(is), '\0');
      is.read(name.data(), static_cast<std::streamsize>(name.size()));
      require(name == p.name, "weights: unexpected tensor " + name);
      require(get_u32(is) == 2, "weights: rank must be 2");
      const auto rows = get_u64(is), cols = get_u64(is);
      require(rows == static_cast<std::uint64_t>(p.value.rows()) &&
                  cols == static_cast<std::uint64_t>(p.value.cols()),
              "weights: shape mismatch for " + name);
      for (Eigen::Index i = 0; i < p.value.rows(); ++i)
        for (Eigen::Index j = 0; j < p.value.cols(); ++j) p.value(i, j) = std::bit_cast<double>(get_u64(is));
    }
    require(static_cast<bool>(is), "weights: truncated stream");
    return net;
  }

 private:
  struct Cache {
    std::vector<Mat> act;  // act[0] = features, act[l+1] = output of hidden l
    std::vector<Mat> pre;  // pre-activations of hidden layers
    Vec sigma;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clamped;
  };

  Mat features(const NetBatch& b) const {
    const Eigen::Index B = b.x.cols();
    Mat f(cfg_.input_dim(), B);
    f.topRows(cfg_.d) = b.x;
    const Mat& E = params_[0].value;
    const Mat& c = params_[1].value;
    const Mat& null_token = params_[2].value;
    const double lt0 = std::log(cfg_.t0), lT = std::log(cfg_.T);
    for (Eigen::Index j = 0; j < B; ++j) {
      if (b.masked[j])
        f.block(cfg_.d, j, cfg_.embed_dim, 1) = null_token;
      else if (cfg_.d_y > 0)
        f.block(cfg_.d, j, cfg_.embed_dim, 1) = E * b.y.col(j) + c;
      else
        f.block(cfg_.d, j, cfg_.embed_dim, 1) = c;
      const double tau = (std::log(b.t[j]) - lt0) / (lT - lt0);
      Eigen::Index r = cfg_.d + cfg_.embed_dim;
      f(r++, j) = 2.0 * tau - 1.0;
      for (int k = 1; k <= cfg_.time_features; ++k) {
        f(r++, j) = std::sin(k * kPi * tau);
        f(r++, j) = std::cos(k * kPi * tau);
      }
    }
    return f;
  }

  Mat activation(const Mat& z) const {
    switch (cfg_.activation) {
      case Activation::relu: return z.cwiseMax(0.0);
      case Activation::softplus:
        return z.unaryExpr([](double v) { return v > 30 ? v : std::log1p(std::exp(v)); });
      case Activation::silu:
        return z.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
    }
    return z;
  }

  Mat activation_grad(const Mat& z) const {
    switch (cfg_.activation) {
      case Activation::relu: return (z.array() > 0.0).cast<double>().matrix();
      case Activation::softplus:
        return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      case Activation::silu:
        return z.unaryExpr([](double v) {
          const double sg = 1.0 / (1.0 + std::exp(-v));
          return sg * (1.0 + v * (1.0 - sg));
        });
    }
    return z;
  }

  // Coefficient-wise products keep each column independent of the batch
  // size, so batched and single evaluations agree bitwise.
  Mat run(const NetBatch& b, Cache& c) const {
    const Eigen::Index B = b.x.cols();
    c.act.clear();
    c.pre.clear();
    c.act.push_back(features(b));
    for (int l = 0; l < cfg_.depth; ++l) {
      const auto& W = params_[3 + 2 * l].value;
      const auto& bias = params_[4 + 2 * l].value;
      Mat z = W.lazyProduct(c.act.back());
      z.colwise() += bias.col(0);
      c.act.push_back(activation(z));
      c.pre.push_back(std::move(z));
    }
    const std::size_t head = params_.size() - 2;
    Mat out = params_[head].value.lazyProduct(c.act.back());
    out.colwise() += params_[head + 1].value.col(0);
    c.sigma.resize(B);
    c.clamped.setConstant(out.rows(), B, false);
    for (Eigen::Index j = 0; j < B; ++j) {
      c.sigma[j] = alpha_sigma(b.t[j]).sigma;
      out.col(j) /= c.sigma[j];
      const double m = clamp_bound(b.t[j]);
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        if (out(i, j) > m) {
          out(i, j) = m;
          c.clamped(i, j) = true;
        } else if (out(i, j) < -m) {
          out(i, j) = -m;
          c.clamped(i, j) = true;
        }
      }
    }
    return out;
  }

  static void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
  }
  static void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
  static std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4] = {};
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8] = {};
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  ScoreNetConfig cfg_;
  std::vector<Tensor> params_;
};

}  // namespace cdiff
