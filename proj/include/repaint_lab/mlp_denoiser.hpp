#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "repaint_lab/binary_io.hpp"
#include "repaint_lab/diffusion.hpp"

namespace repaint_lab {

/// Small trainable noise predictor:
///
///   z      = [flatten(x_t), embed(t)]
///   h      = tanh(W1 z + b1)
///   eps_hat = W2 h + b2
///
/// embed(t) is a fixed sinusoidal table (sin/cos pairs at geometrically
/// spaced frequencies), so all learnable state lives in one flat parameter
/// vector laid out as W1 (row-major, hidden x (P+E)), b1, W2 (row-major,
/// P x hidden), b2. The checkpoint file stores parameters in this order.
class MlpDenoiser final : public Denoiser {
 public:
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  MlpDenoiser(std::size_t width, std::size_t height, std::size_t hidden, std::size_t embed)
      : width_(width), height_(height), hidden_(hidden), embed_(embed) {
    if (width * height == 0 || hidden == 0) throw std::invalid_argument("MlpDenoiser: zero dimension");
    if (embed % 2 != 0) throw std::invalid_argument("MlpDenoiser: embedding size must be even");
    params_.assign(parameter_count(), 0.0);
  }

  /// Glorot-uniform weights, zero biases.
  void initialize(Rng& rng) {
    const double in = static_cast<double>(inputs());
    const double a1 = std::sqrt(6.0 / (in + hidden_));
    const double a2 = std::sqrt(6.0 / (hidden_ + pixels()));
    std::uniform_real_distribution<double> u1(-a1, a1), u2(-a2, a2);
    auto w1 = W1();
    for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = u1(rng);
    auto w2 = W2();
    for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = u2(rng);
    b1().setZero();
    b2().setZero();
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t embed() const { return embed_; }
  std::size_t pixels() const { return width_ * height_; }
  std::size_t inputs() const { return pixels() + embed_; }
  std::size_t parameter_count() const { return hidden_ * inputs() + hidden_ + pixels() * hidden_ + pixels(); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  Eigen::VectorXd time_embedding(int t) const {
    Eigen::VectorXd e(static_cast<Eigen::Index>(embed_));
    const std::size_t half = embed_ / 2;
    for (std::size_t j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(1000.0) * static_cast<double>(j) / static_cast<double>(half));
      e(static_cast<Eigen::Index>(2 * j)) = std::sin(t * freq);
      e(static_cast<Eigen::Index>(2 * j + 1)) = std::cos(t * freq);
    }
    return e;
  }

  Image predict_eps(const Image& x_t, int t, const NoiseSchedule&) const override {
    check_input(x_t);
    const Eigen::VectorXd h = hidden_activation(input_vector(x_t, t));
    const Eigen::VectorXd out = W2() * h + b2();
    return Image(width_, height_, std::vector<double>(out.data(), out.data() + out.size()));
  }

  /// Per-pixel mean squared error of the prediction against `eps_target` for
  /// the given noisy input, adding d(loss)/d(theta) into `grad`.
  double loss_and_grad(const Image& x_t, int t, const Image& eps_target, std::span<double> grad) const {
    check_input(x_t);
    if (grad.size() != params_.size()) throw std::invalid_argument("loss_and_grad: gradient buffer size");
    const Eigen::VectorXd z = input_vector(x_t, t);
    const Eigen::VectorXd h = hidden_activation(z);
    const Eigen::VectorXd out = W2() * h + b2();
    const auto P = static_cast<Eigen::Index>(pixels());
    Eigen::Map<const Eigen::VectorXd> target(eps_target.pixels().data(), P);
    const Eigen::VectorXd resid = out - target;
    const double loss = resid.squaredNorm() / static_cast<double>(P);

    const Eigen::VectorXd d_out = (2.0 / static_cast<double>(P)) * resid;
    const Eigen::VectorXd d_pre = (W2().transpose() * d_out).cwiseProduct((1.0 - h.array().square()).matrix());

    double* g = grad.data();
    const auto H = static_cast<Eigen::Index>(hidden_);
    const auto I = static_cast<Eigen::Index>(inputs());
    Eigen::Map<RowMat>(g, H, I).noalias() += d_pre * z.transpose();
    g += H * I;
    Eigen::Map<Eigen::VectorXd>(g, H) += d_pre;
    g += H;
    Eigen::Map<RowMat>(g, P, H).noalias() += d_out * h.transpose();
    g += P * H;
    Eigen::Map<Eigen::VectorXd>(g, P) += d_out;
    return loss;
  }

 private:
  void check_input(const Image& x) const {
    if (!x.same_shape(width_, height_)) throw DimensionError("MlpDenoiser: input shape differs from model");
  }

  Eigen::VectorXd input_vector(const Image& x, int t) const {
    Eigen::VectorXd z(static_cast<Eigen::Index>(inputs()));
    for (std::size_t i = 0; i < pixels(); ++i) z(static_cast<Eigen::Index>(i)) = x[i];
    z.tail(static_cast<Eigen::Index>(embed_)) = time_embedding(t);
    return z;
  }

  Eigen::VectorXd hidden_activation(const Eigen::VectorXd& z) const {
    return (W1() * z + b1()).array().tanh().matrix();
  }

  Eigen::Map<RowMat> W1() { return {params_.data(), rows(hidden_), rows(inputs())}; }
  Eigen::Map<const RowMat> W1() const { return {params_.data(), rows(hidden_), rows(inputs())}; }
  Eigen::Map<Eigen::VectorXd> b1() { return {params_.data() + off_b1(), rows(hidden_)}; }
  Eigen::Map<const Eigen::VectorXd> b1() const { return {params_.data() + off_b1(), rows(hidden_)}; }
  Eigen::Map<RowMat> W2() { return {params_.data() + off_w2(), rows(pixels()), rows(hidden_)}; }
  Eigen::Map<const RowMat> W2() const { return {params_.data() + off_w2(), rows(pixels()), rows(hidden_)}; }
  Eigen::Map<Eigen::VectorXd> b2() { return {params_.data() + off_b2(), rows(pixels())}; }
  Eigen::Map<const Eigen::VectorXd> b2() const { return {params_.data() + off_b2(), rows(pixels())}; }

  static Eigen::Index rows(std::size_t n) { return static_cast<Eigen::Index>(n); }
  std::size_t off_b1() const { return hidden_ * inputs(); }
  std::size_t off_w2() const { return off_b1() + hidden_; }
  std::size_t off_b2() const { return off_w2() + pixels() * hidden_; }

  std::size_t width_, height_, hidden_, embed_;
  std::vector<double> params_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[5] = "DNSR";
inline constexpr std::uint8_t kCheckpointVersion = 1;

// Checkpoint: "DNSR", u8 version, u32 width, u32 height, u32 hidden,
// u32 embed, then parameter_count() f32 in the documented order.
inline void write_checkpoint(const MlpDenoiser& model, std::ostream& os) {
  binary::put_magic(os, kCheckpointMagic);
  os.put(static_cast<char>(kCheckpointVersion));
  binary::put_u32(os, static_cast<std::uint32_t>(model.width()));
  binary::put_u32(os, static_cast<std::uint32_t>(model.height()));
  binary::put_u32(os, static_cast<std::uint32_t>(model.hidden()));
  binary::put_u32(os, static_cast<std::uint32_t>(model.embed()));
  for (double p : model.parameters()) binary::put_f32(os, static_cast<float>(p));
}

inline MlpDenoiser read_checkpoint(std::istream& is) {
  if (!binary::check_magic(is, kCheckpointMagic)) throw CheckpointError("checkpoint: bad magic");
  const int version = is.get();
  if (version != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t w, h, hid, emb;
  if (!binary::get_u32(is, w) || !binary::get_u32(is, h) || !binary::get_u32(is, hid) || !binary::get_u32(is, emb))
    throw CheckpointError("checkpoint: header truncated");
  if (std::uint64_t{w} * h > (std::uint64_t{1} << 20) || hid > (1u << 16) || emb > (1u << 16))
    throw CheckpointError("checkpoint: architecture dimensions out of range");
  if (w == 0 || h == 0 || hid == 0 || emb % 2 != 0) throw CheckpointError("checkpoint: invalid architecture dimensions");
  MlpDenoiser model(w, h, hid, emb);
  for (auto& p : model.parameters()) {
    float f;
    if (!binary::get_f32(is, f)) throw CheckpointError("checkpoint: parameters truncated");
    p = f;
  }
  return model;
}

inline void write_checkpoint(const MlpDenoiser& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(model, os);
}

inline MlpDenoiser read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open '" + path.string() + "'");
  return read_checkpoint(is);
}

}  // namespace repaint_lab
