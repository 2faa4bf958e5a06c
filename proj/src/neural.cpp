#include "specmorl/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace specmorl {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstRowVec = Eigen::Map<const Eigen::RowVectorXd>;
using MutRowVec = Eigen::Map<Eigen::RowVectorXd>;

Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

}  // namespace

QNetwork::QNetwork(const NetworkShape& shape) : shape_(shape) {
  if (shape.vocab < 1 || shape.enc_hidden < 1 || shape.enc_layers < 1 || shape.state_width < 1 ||
      shape.head_hidden < 1 || shape.head_layers < 1 || shape.num_actions < 1)
    throw ShapeError("network dimensions must be positive");
  const int h = shape.enc_hidden;
  for (int l = 0; l < shape.enc_layers; ++l) {
    const int in = l == 0 ? shape.vocab : 2 * h;
    for (int d = 0; d < 2; ++d) {
      const std::string prefix = "enc.l" + std::to_string(l) + (d == 0 ? ".fwd." : ".bwd.");
      GruOffsets g{};
      g.in = in;
      g.w_in = add_tensor(prefix + "w_in", {3 * h, in});
      g.w_h = add_tensor(prefix + "w_h", {3 * h, h});
      g.b_in = add_tensor(prefix + "b_in", {3 * h});
      g.b_h = add_tensor(prefix + "b_h", {3 * h});
      gru_.push_back(g);
    }
  }
  encoder_params_ = params_.size();
  int in = shape.head_input();
  for (int k = 0; k < shape.head_layers; ++k) {
    const int out = k + 1 == shape.head_layers ? shape.num_actions : shape.head_hidden;
    AffineOffsets a{};
    a.in = in;
    a.out = out;
    a.w = add_tensor("head." + std::to_string(k) + ".w", {out, in});
    a.b = add_tensor("head." + std::to_string(k) + ".b", {out});
    head_.push_back(a);
    in = out;
  }
}

QNetwork QNetwork::random(const NetworkShape& shape, std::uint64_t seed) {
  QNetwork net(shape);
  Rng rng(seed);
  for (const TensorInfo& t : net.tensors_) {
    // GRU tensors scale by hidden size, affine layers by their fan-in.
    double fan_in = shape.enc_hidden;
    if (t.name.rfind("head.", 0) == 0) {
      const std::size_t layer = static_cast<std::size_t>(std::stoi(t.name.substr(5)));
      fan_in = net.head_[layer].in;
    }
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < t.size; ++i) net.params_[t.offset + i] = dist(rng);
  }
  return net;
}

std::size_t QNetwork::add_tensor(const std::string& name, std::vector<int> shape) {
  const std::size_t size =
      static_cast<std::size_t>(std::accumulate(shape.begin(), shape.end(), 1, std::multiplies<int>()));
  const std::size_t offset = params_.size();
  tensors_.push_back({name, std::move(shape), offset, size});
  params_.resize(offset + size, 0.0);
  grads_.resize(offset + size, 0.0);
  return offset;
}

const TensorInfo& QNetwork::tensor(const std::string& name) const {
  for (const TensorInfo& t : tensors_)
    if (t.name == name) return t;
  throw ShapeError("no parameter tensor named " + name);
}

void QNetwork::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

// ---------------------------------------------------------------- encoder

Matrix QNetwork::encode_batch(std::span<const TokenSequence* const> sequences, EncoderTape* tape) const {
  const int batch = static_cast<int>(sequences.size());
  if (batch == 0) throw EmptySequence("encode needs at least one sequence");
  std::vector<int> lengths(static_cast<std::size_t>(batch));
  int steps = 0;
  for (int b = 0; b < batch; ++b) {
    const TokenSequence& seq = *sequences[static_cast<std::size_t>(b)];
    if (seq.empty()) throw EmptySequence("cannot encode an empty token sequence");
    lengths[static_cast<std::size_t>(b)] = static_cast<int>(seq.size());
    steps = std::max(steps, static_cast<int>(seq.size()));
  }
  const int h = shape_.enc_hidden;
  const int rows = steps * batch;

  Matrix input = Matrix::Zero(rows, shape_.vocab);
  for (int b = 0; b < batch; ++b) {
    const TokenSequence& seq = *sequences[static_cast<std::size_t>(b)];
    for (int t = 0; t < static_cast<int>(seq.size()); ++t) {
      if (seq[static_cast<std::size_t>(t)] >= shape_.vocab) throw IndexError("token id outside the vocabulary");
      input(t * batch + b, seq[static_cast<std::size_t>(t)]) = 1.0;
    }
  }

  if (tape) {
    tape->steps = steps;
    tape->batch = batch;
    tape->lengths = lengths;
    tape->layers.assign(static_cast<std::size_t>(shape_.enc_layers), {});
  }

  Matrix encoding(batch, 2 * h);
  for (int l = 0; l < shape_.enc_layers; ++l) {
    Matrix output = Matrix::Zero(rows, 2 * h);
    EncoderTape::Layer* layer_tape = tape ? &tape->layers[static_cast<std::size_t>(l)] : nullptr;
    for (int d = 0; d < 2; ++d) {
      const GruOffsets& g = gru_[static_cast<std::size_t>(l * 2 + d)];
      const ConstMap w_in(params_.data() + g.w_in, 3 * h, g.in);
      const ConstMap w_h(params_.data() + g.w_h, 3 * h, h);
      const ConstRowVec b_in(params_.data() + g.b_in, 3 * h);
      const ConstRowVec b_h(params_.data() + g.b_h, 3 * h);

      Matrix gates_in(rows, 3 * h);
      gates_in.noalias() = input * w_in.transpose();
      gates_in.rowwise() += b_in;

      EncoderTape::Direction* dir = layer_tape ? &layer_tape->dirs[static_cast<std::size_t>(d)] : nullptr;
      if (dir) {
        dir->gates_h.resize(rows, 3 * h);
        dir->h_prev.resize(rows, h);
        dir->r.resize(rows, h);
        dir->z.resize(rows, h);
        dir->n.resize(rows, h);
      }

      Matrix state = Matrix::Zero(batch, h);
      Matrix gates_h(batch, 3 * h);
      for (int s = 0; s < steps; ++s) {
        const int t = d == 0 ? s : steps - 1 - s;
        gates_h.noalias() = state * w_h.transpose();
        gates_h.rowwise() += b_h;
        const auto gi = gates_in.middleRows(t * batch, batch);
        const Matrix r = sigmoid(gi.leftCols(h) + gates_h.leftCols(h));
        const Matrix z = sigmoid(gi.middleCols(h, h) + gates_h.middleCols(h, h));
        const Matrix n =
            (gi.rightCols(h).array() + r.array() * gates_h.rightCols(h).array()).tanh().matrix();
        if (dir) {
          dir->gates_h.middleRows(t * batch, batch) = gates_h;
          dir->h_prev.middleRows(t * batch, batch) = state;
          dir->r.middleRows(t * batch, batch) = r;
          dir->z.middleRows(t * batch, batch) = z;
          dir->n.middleRows(t * batch, batch) = n;
        }
        const Matrix next = ((1.0 - z.array()) * n.array() + z.array() * state.array()).matrix();
        for (int b = 0; b < batch; ++b) {
          if (t < lengths[static_cast<std::size_t>(b)]) {
            state.row(b) = next.row(b);
            output.block(t * batch + b, d * h, 1, h) = next.row(b);
          }
        }
      }
      if (l + 1 == shape_.enc_layers) encoding.middleCols(d * h, h) = state;
    }
    if (layer_tape) layer_tape->input = std::move(input);
    input = std::move(output);
  }
  return encoding;
}

Vector QNetwork::encode(const TokenSequence& tokens) const {
  const TokenSequence* seq = &tokens;
  const Matrix enc = encode_batch(std::span<const TokenSequence* const>(&seq, 1));
  return enc.row(0).transpose();
}

void QNetwork::encoder_backward(const EncoderTape& tape, const Matrix& d_encoding) {
  const int h = shape_.enc_hidden;
  const int batch = tape.batch;
  const int steps = tape.steps;
  const int rows = steps * batch;
  Matrix d_output = Matrix::Zero(rows, 2 * h);
  for (int l = shape_.enc_layers - 1; l >= 0; --l) {
    const EncoderTape::Layer& layer = tape.layers[static_cast<std::size_t>(l)];
    Matrix d_input;
    if (l > 0) d_input = Matrix::Zero(rows, layer.input.cols());
    for (int d = 0; d < 2; ++d) {
      const GruOffsets& g = gru_[static_cast<std::size_t>(l * 2 + d)];
      const ConstMap w_in(params_.data() + g.w_in, 3 * h, g.in);
      const ConstMap w_h(params_.data() + g.w_h, 3 * h, h);
      MutMap dw_in(grads_.data() + g.w_in, 3 * h, g.in);
      MutMap dw_h(grads_.data() + g.w_h, 3 * h, h);
      MutRowVec db_in(grads_.data() + g.b_in, 3 * h);
      MutRowVec db_h(grads_.data() + g.b_h, 3 * h);
      const EncoderTape::Direction& dir = layer.dirs[static_cast<std::size_t>(d)];

      Matrix carry = l + 1 == shape_.enc_layers ? Matrix(d_encoding.middleCols(d * h, h)) : Matrix::Zero(batch, h);
      Matrix d_gates_in = Matrix::Zero(rows, 3 * h);
      Matrix d_gates_h = Matrix::Zero(rows, 3 * h);
      Matrix dgh(batch, 3 * h);
      Matrix dgi(batch, 3 * h);
      for (int s = steps - 1; s >= 0; --s) {
        const int t = d == 0 ? s : steps - 1 - s;
        const int row0 = t * batch;
        const Matrix dh = carry + d_output.block(row0, d * h, batch, h);
        const auto r = dir.r.middleRows(row0, batch).array();
        const auto z = dir.z.middleRows(row0, batch).array();
        const auto n = dir.n.middleRows(row0, batch).array();
        const auto hp = dir.h_prev.middleRows(row0, batch).array();
        const auto ghn = dir.gates_h.block(row0, 2 * h, batch, h).array();

        const Eigen::ArrayXXd dn_pre = dh.array() * (1.0 - z) * (1.0 - n * n);
        const Eigen::ArrayXXd dz_pre = dh.array() * (hp - n) * z * (1.0 - z);
        const Eigen::ArrayXXd dr_pre = dn_pre * ghn * r * (1.0 - r);

        dgi.leftCols(h) = dr_pre.matrix();
        dgi.middleCols(h, h) = dz_pre.matrix();
        dgi.rightCols(h) = dn_pre.matrix();
        dgh.leftCols(h) = dr_pre.matrix();
        dgh.middleCols(h, h) = dz_pre.matrix();
        dgh.rightCols(h) = (dn_pre * r).matrix();

        Matrix d_prev = (dh.array() * z).matrix();
        d_prev.noalias() += dgh * w_h;
        for (int b = 0; b < batch; ++b) {
          if (t < tape.lengths[static_cast<std::size_t>(b)]) {
            d_gates_in.row(row0 + b) = dgi.row(b);
            d_gates_h.row(row0 + b) = dgh.row(b);
          } else {
            d_prev.row(b) = dh.row(b);  // padded step: state passes through unchanged
          }
        }
        carry = std::move(d_prev);
      }
      dw_h.noalias() += d_gates_h.transpose() * dir.h_prev;
      db_h += d_gates_h.colwise().sum();
      dw_in.noalias() += d_gates_in.transpose() * layer.input;
      db_in += d_gates_in.colwise().sum();
      if (l > 0) d_input.noalias() += d_gates_in * w_in;
    }
    if (l > 0) d_output = std::move(d_input);
  }
}

// ---------------------------------------------------------------- head

Matrix QNetwork::head_forward(const Matrix& input, HeadTape* tape) const {
  if (input.cols() != shape_.head_input()) throw ShapeError("head input width mismatch");
  if (tape) {
    tape->inputs.clear();
    tape->pre_activations.clear();
  }
  Matrix x = input;
  for (std::size_t k = 0; k < head_.size(); ++k) {
    const AffineOffsets& a = head_[k];
    const ConstMap w(params_.data() + a.w, a.out, a.in);
    const ConstRowVec b(params_.data() + a.b, a.out);
    Matrix pre(x.rows(), a.out);
    pre.noalias() = x * w.transpose();
    pre.rowwise() += b;
    Matrix next = k + 1 < head_.size() ? Matrix(pre.cwiseMax(0.0)) : pre;
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->pre_activations.push_back(std::move(pre));
    }
    x = std::move(next);
  }
  return x;
}

Matrix QNetwork::head_backward(const HeadTape& tape, const Matrix& dq) {
  Matrix d = dq;
  for (std::size_t k = head_.size(); k-- > 0;) {
    const AffineOffsets& a = head_[k];
    const ConstMap w(params_.data() + a.w, a.out, a.in);
    MutMap dw(grads_.data() + a.w, a.out, a.in);
    MutRowVec db(grads_.data() + a.b, a.out);
    dw.noalias() += d.transpose() * tape.inputs[k];
    db += d.colwise().sum();
    Matrix dx(d.rows(), a.in);
    dx.noalias() = d * w;
    if (k == 0) return dx;
    d = (dx.array() * (tape.pre_activations[k - 1].array() > 0.0).cast<double>()).matrix();
  }
  return d;
}

// ---------------------------------------------------------------- full network

Matrix QNetwork::forward(const Matrix& features, std::span<const TokenSequence* const> sequences,
                         std::span<const int> row_goal, Tape* tape) const {
  if (features.cols() != shape_.state_width) throw ShapeError("state feature width mismatch");
  if (row_goal.size() != static_cast<std::size_t>(features.rows())) throw ShapeError("one goal index per row");
  for (int g : row_goal)
    if (g < 0 || g >= static_cast<int>(sequences.size())) throw ShapeError("goal index out of range");
  const Matrix enc = encode_batch(sequences, tape ? &tape->encoder : nullptr);
  Matrix input(features.rows(), shape_.head_input());
  input.leftCols(shape_.state_width) = features;
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    input.row(i).tail(shape_.goal_width()) = enc.row(row_goal[static_cast<std::size_t>(i)]);
  Matrix q = head_forward(input, tape ? &tape->head : nullptr);
  if (tape) {
    tape->recorded = true;
    tape->used_encoder = true;
    tape->row_goal.assign(row_goal.begin(), row_goal.end());
  }
  return q;
}

Matrix QNetwork::forward_goals(const Matrix& features, const Matrix& goals, Tape* tape) const {
  if (features.cols() != shape_.state_width) throw ShapeError("state feature width mismatch");
  if (goals.cols() != shape_.goal_width() || goals.rows() != features.rows())
    throw ShapeError("goal matrix must have one goal_width row per feature row");
  Matrix input(features.rows(), shape_.head_input());
  input.leftCols(shape_.state_width) = features;
  input.rightCols(shape_.goal_width()) = goals;
  Matrix q = head_forward(input, tape ? &tape->head : nullptr);
  if (tape) {
    tape->recorded = true;
    tape->used_encoder = false;
    tape->row_goal.clear();
  }
  return q;
}

void QNetwork::backward(const Tape& tape, const Matrix& dq) {
  if (!tape.recorded) throw NoTape("backward called without a recorded forward pass");
  if (dq.cols() != shape_.num_actions || dq.rows() != tape.head.inputs.front().rows())
    throw ShapeError("dQ shape does not match the recorded batch");
  const Matrix d_input = head_backward(tape.head, dq);
  if (!tape.used_encoder) return;
  Matrix d_enc = Matrix::Zero(tape.encoder.batch, shape_.goal_width());
  for (Eigen::Index i = 0; i < d_input.rows(); ++i)
    d_enc.row(tape.row_goal[static_cast<std::size_t>(i)]) += d_input.row(i).tail(shape_.goal_width());
  encoder_backward(tape.encoder, d_enc);
}

std::array<double, 4> QNetwork::q_values(std::span<const double> state_features, const TokenSequence& tokens) const {
  const Vector enc = encode(tokens);
  return q_values_from_goal(state_features, std::span<const double>(enc.data(), static_cast<std::size_t>(enc.size())));
}

std::array<double, 4> QNetwork::q_values_from_goal(std::span<const double> state_features,
                                                   std::span<const double> goal) const {
  if (state_features.size() != static_cast<std::size_t>(shape_.state_width))
    throw ShapeError("state feature width mismatch");
  if (goal.size() != static_cast<std::size_t>(shape_.goal_width())) throw ShapeError("goal width mismatch");
  if (shape_.num_actions != 4) throw ShapeError("q_values expects four actions");
  Matrix input(1, shape_.head_input());
  for (int i = 0; i < shape_.state_width; ++i) input(0, i) = state_features[static_cast<std::size_t>(i)];
  for (int i = 0; i < shape_.goal_width(); ++i)
    input(0, shape_.state_width + i) = goal[static_cast<std::size_t>(i)];
  const Matrix q = head_forward(input);
  return {q(0, 0), q(0, 1), q(0, 2), q(0, 3)};
}

// ---------------------------------------------------------------- Adam

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || params.size() != m_.size())
    throw ShapeError("Adam: parameter, gradient and moment sizes differ");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grads[i] * grads[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
}

void Adam::reset() {
  std::fill(m_.begin(), m_.end(), 0.0);
  std::fill(v_.begin(), v_.end(), 0.0);
  t_ = 0;
}

void Adam::restore(std::int64_t steps, std::vector<double> m, std::vector<double> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("Adam moments size mismatch");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

void adam_step(Adam& optimizer, std::span<double> params, std::span<const double> grads) {
  optimizer.step(params, grads);
}

}  // namespace specmorl
