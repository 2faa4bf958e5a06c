#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "specmorl/core.hpp"
#include "specmorl/speclang.hpp"

namespace specmorl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct NetworkShape {
  int vocab = kVocabSize;
  int enc_hidden = 64;
  int enc_layers = 3;
  int state_width = 25;
  int head_hidden = 128;
  int head_layers = 4;
  int num_actions = 4;

  int goal_width() const { return 2 * enc_hidden; }
  int head_input() const { return state_width + goal_width(); }
  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Activations recorded by a forward pass of the spec encoder, batched over
// sequences of possibly different lengths (time-major, padded rows masked).
struct EncoderTape {
  struct Direction {
    Matrix gates_h;  // (T*B) x 3H, W_h h + b_h before gating
    Matrix h_prev;   // (T*B) x H
    Matrix r, z, n;  // (T*B) x H
  };
  struct Layer {
    Matrix input;  // (T*B) x in
    std::array<Direction, 2> dirs;
  };
  int steps = 0;
  int batch = 0;
  std::vector<int> lengths;
  std::vector<Layer> layers;
};

struct HeadTape {
  std::vector<Matrix> inputs;       // input to each affine layer
  std::vector<Matrix> pre_activations;
};

// Everything backward() needs from one forward pass.
struct Tape {
  bool recorded = false;
  bool used_encoder = false;
  EncoderTape encoder;
  HeadTape head;
  std::vector<int> row_goal;  // head row -> encoded sequence, when the encoder ran
};

// Spec-conditioned Q-network: a stacked bidirectional GRU over one-hot tokens
// whose final hidden states (last layer, both directions) are concatenated
// with the state features and fed to a ReLU MLP emitting one Q-value per
// action. Parameters live in a single flat buffer; gradients in a parallel
// buffer that backward() accumulates into.
class QNetwork {
 public:
  explicit QNetwork(const NetworkShape& shape = {});
  static QNetwork random(const NetworkShape& shape, std::uint64_t seed);

  const NetworkShape& shape() const { return shape_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> gradients() { return grads_; }
  std::span<const double> gradients() const { return grads_; }
  void zero_grad();
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const TensorInfo& tensor(const std::string& name) const;
  // Index range of all encoder parameters (they come first in the buffer).
  std::size_t encoder_parameter_count() const { return encoder_params_; }

  // (B x goal_width) encodings, one row per sequence.
  Matrix encode_batch(std::span<const TokenSequence* const> sequences, EncoderTape* tape = nullptr) const;
  Vector encode(const TokenSequence& tokens) const;

  Matrix head_forward(const Matrix& input, HeadTape* tape = nullptr) const;

  // Q-values for rows (features[i], sequences[row_goal[i]]).
  Matrix forward(const Matrix& features, std::span<const TokenSequence* const> sequences,
                 std::span<const int> row_goal, Tape* tape = nullptr) const;
  // Q-values for rows (features[i], goals[i]) with goal vectors supplied
  // directly; the encoder is bypassed.
  Matrix forward_goals(const Matrix& features, const Matrix& goals, Tape* tape = nullptr) const;

  // Accumulates d(loss)/d(params) given d(loss)/d(Q) for the recorded pass.
  void backward(const Tape& tape, const Matrix& dq);

  std::array<double, 4> q_values(std::span<const double> state_features, const TokenSequence& tokens) const;
  std::array<double, 4> q_values_from_goal(std::span<const double> state_features,
                                           std::span<const double> goal) const;

  friend bool operator==(const QNetwork& a, const QNetwork& b) {
    return a.shape_ == b.shape_ && a.params_ == b.params_;
  }

 private:
  std::size_t add_tensor(const std::string& name, std::vector<int> shape);
  const double* p(const std::string& name) const;
  void encoder_backward(const EncoderTape& tape, const Matrix& d_encoding);
  Matrix head_backward(const HeadTape& tape, const Matrix& dq);

  NetworkShape shape_;
  std::vector<TensorInfo> tensors_;
  // Aligned so vectorized reductions over mapped tensors split the same way in
  // every allocation; results are then bit-reproducible across processes.
  std::vector<double, Eigen::aligned_allocator<double>> params_;
  std::vector<double, Eigen::aligned_allocator<double>> grads_;
  std::size_t encoder_params_ = 0;
  // Cached offsets for the hot paths.
  struct GruOffsets {
    std::size_t w_in, w_h, b_in, b_h;
    int in;
  };
  std::vector<GruOffsets> gru_;  // layer * 2 + direction
  struct AffineOffsets {
    std::size_t w, b;
    int in, out;
  };
  std::vector<AffineOffsets> head_;
};

// Deep copy; later updates to `net` never touch the copy.
inline QNetwork copy_into_target(const QNetwork& net) { return net; }

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction; first and second moments persist between steps.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t size, AdamConfig config) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads);
  void reset();

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }
  void restore(std::int64_t steps, std::vector<double> m, std::vector<double> v);

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::int64_t t_ = 0;
};

void adam_step(Adam& optimizer, std::span<double> params, std::span<const double> grads);

}  // namespace specmorl
