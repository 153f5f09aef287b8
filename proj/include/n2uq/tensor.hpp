// Copyright 2026 The N2UQ Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense row-major tensors with a tape-based reverse-mode autodiff.
//
// Every value is a 2-D Eigen matrix (batch rows x feature columns). Ops are
// free functions that record a node on the tape owning their operands; the
// tape is append-only, so node ids are already a topological order and
// Tape::backward walks them in reverse.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "n2uq/errors.hpp"

namespace n2uq {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(*this); }
  const Matrix<Scalar>& grad() const { return tape_->grad(*this); }
  bool requires_grad() const { return tape_->requires_grad(*this); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

  Tape<Scalar>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  explicit operator bool() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  // Maps the upstream gradient to one gradient per input, in input order.
  // Entries for inputs that do not require a gradient may be left empty.
  using BackwardFn = std::function<std::vector<Mat>(const Mat& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Mat value, bool requires_grad = false) {
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  Var<Scalar> record(std::string op, Mat value, std::vector<Var<Scalar>> inputs,
                     BackwardFn backward, bool custom_gradient = false) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.custom_gradient = custom_gradient;
    for (const auto& in : inputs) {
      if (in.tape() != this) throw ContractError(n.op + ": operand belongs to another tape");
      n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
      n.inputs.push_back(in.id());
    }
    if (n.requires_grad && !backward) {
      throw ContractError(n.op + ": no backward function for an input that requires a gradient");
    }
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  // Populates grad() for every requires_grad node. Gradients from fan-out are
  // summed. Calling it again on the same tape recomputes from scratch.
  void backward(const Var<Scalar>& loss) {
    const Node& root = node(loss);
    if (root.value.rows() != 1 || root.value.cols() != 1) {
      throw ContractError("backward: loss must be a scalar (1x1) tensor");
    }
    for (auto& n : nodes_) {
      n.grad.resize(0, 0);
      n.backward_calls = 0;
    }
    nodes_[loss.id()].grad = Mat::Ones(1, 1);

    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      std::vector<Mat> in_grads = n.backward(n.grad);
      ++n.backward_calls;
      if (in_grads.size() != n.inputs.size()) {
        throw ContractError(n.op + ": backward returned " + std::to_string(in_grads.size()) +
                            " gradients for " + std::to_string(n.inputs.size()) + " inputs");
      }
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        Node& in = nodes_[n.inputs[k]];
        if (!in.requires_grad) continue;
        Mat& g = in_grads[k];
        if (g.size() == 0 && in.value.size() != 0) {
          throw ContractError(n.op + ": missing gradient for input " + std::to_string(k));
        }
        if (g.rows() != in.value.rows() || g.cols() != in.value.cols()) {
          throw DimensionError(n.op + ": gradient shape does not match input " + std::to_string(k));
        }
        if (in.grad.size() == 0) {
          in.grad = std::move(g);
        } else {
          in.grad += g;
        }
      }
    }
    for (auto& n : nodes_) {
      if (n.requires_grad && n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
  }

  const Mat& value(const Var<Scalar>& v) const { return node(v).value; }
  const Mat& grad(const Var<Scalar>& v) const { return node(v).grad; }
  bool requires_grad(const Var<Scalar>& v) const { return node(v).requires_grad; }
  bool is_custom_gradient(const Var<Scalar>& v) const { return node(v).custom_gradient; }
  const std::string& op(const Var<Scalar>& v) const { return node(v).op; }
  std::size_t backward_calls(const Var<Scalar>& v) const { return node(v).backward_calls; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Mat value;
    Mat grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool custom_gradient = false;
    std::size_t backward_calls = 0;
  };

  const Node& node(const Var<Scalar>& v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) throw ContractError("variable does not belong to this tape");
    return nodes_[v.id()];
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
Tape<Scalar>& tape_of(const Var<Scalar>& a) {
  if (!a) throw ContractError("operation on an empty variable");
  return *a.tape();
}

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " disagree");
  }
  Mat out = a.value() * b.value();
  return detail::tape_of(a).record("matmul", std::move(out), {a, b}, [a, b](const Mat& g) {
    std::vector<Mat> grads(2);
    if (a.requires_grad()) grads[0] = g * b.value().transpose();
    if (b.requires_grad()) grads[1] = a.value().transpose() * g;
    return grads;
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  Mat out = a.value().transpose();
  return detail::tape_of(a).record("transpose", std::move(out), {a},
                                   [](const Mat& g) { return std::vector<Mat>{g.transpose()}; });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  detail::require_same_shape("add", a, b);
  Mat out = a.value() + b.value();
  return detail::tape_of(a).record("add", std::move(out), {a, b},
                                   [](const Mat& g) { return std::vector<Mat>{g, g}; });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  detail::require_same_shape("sub", a, b);
  Mat out = a.value() - b.value();
  return detail::tape_of(a).record("sub", std::move(out), {a, b},
                                   [](const Mat& g) { return std::vector<Mat>{g, -g}; });
}

template <typename Scalar>
Var<Scalar> cwise_product(const Var<Scalar>& a, const Var<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  detail::require_same_shape("cwise_product", a, b);
  Mat out = a.value().cwiseProduct(b.value());
  return detail::tape_of(a).record("cwise_product", std::move(out), {a, b}, [a, b](const Mat& g) {
    return std::vector<Mat>{g.cwiseProduct(b.value()), g.cwiseProduct(a.value())};
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  using Mat = Matrix<Scalar>;
  Mat out = a.value() * factor;
  return detail::tape_of(a).record("scale", std::move(out), {a},
                                   [factor](const Mat& g) { return std::vector<Mat>{g * factor}; });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a) {
  return cwise_product(a, a);
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows(), c = a.cols();
  return detail::tape_of(a).record("sum", std::move(out), {a}, [r, c](const Mat& g) {
    return std::vector<Mat>{Mat::Constant(r, c, g(0, 0))};
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  if (a.value().size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

// Contiguous row-major reshape.
template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Index rows, Index cols) {
  using Mat = Matrix<Scalar>;
  if (rows * cols != a.value().size()) throw DimensionError("reshape: element count changes");
  Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  const Index r = a.rows(), c = a.cols();
  return detail::tape_of(a).record("reshape", std::move(out), {a}, [r, c](const Mat& g) {
    return std::vector<Mat>{Eigen::Map<const Mat>(g.data(), r, c)};
  });
}

// Columns are grouped into channels of `channel_size` consecutive entries;
// v holds one value per channel and is broadcast over rows and the channel.
template <typename Scalar>
Var<Scalar> add_channelwise(const Var<Scalar>& x, const Var<Scalar>& v, Index channel_size = 1) {
  using Mat = Matrix<Scalar>;
  const Index channels = v.value().size();
  if (v.rows() != 1 || x.cols() != channels * channel_size) {
    throw DimensionError("add_channelwise: expected " + std::to_string(x.cols()) + " = channels x channel_size");
  }
  Mat out = x.value();
  for (Index c = 0; c < channels; ++c) {
    out.middleCols(c * channel_size, channel_size).array() += v.value()(0, c);
  }
  return detail::tape_of(x).record("add_channelwise", std::move(out), {x, v},
                                   [channels, channel_size](const Mat& g) {
                                     Mat gv(1, channels);
                                     for (Index c = 0; c < channels; ++c) {
                                       gv(0, c) = g.middleCols(c * channel_size, channel_size).sum();
                                     }
                                     return std::vector<Mat>{g, gv};
                                   });
}

template <typename Scalar>
Var<Scalar> mul_channelwise(const Var<Scalar>& x, const Var<Scalar>& v, Index channel_size = 1) {
  using Mat = Matrix<Scalar>;
  const Index channels = v.value().size();
  if (v.rows() != 1 || x.cols() != channels * channel_size) {
    throw DimensionError("mul_channelwise: expected " + std::to_string(x.cols()) + " = channels x channel_size");
  }
  Mat out = x.value();
  for (Index c = 0; c < channels; ++c) {
    out.middleCols(c * channel_size, channel_size) *= v.value()(0, c);
  }
  return detail::tape_of(x).record("mul_channelwise", std::move(out), {x, v},
                                   [x, v, channels, channel_size](const Mat& g) {
                                     Mat gx = g;
                                     Mat gv(1, channels);
                                     for (Index c = 0; c < channels; ++c) {
                                       gx.middleCols(c * channel_size, channel_size) *= v.value()(0, c);
                                       gv(0, c) = g.middleCols(c * channel_size, channel_size)
                                                      .cwiseProduct(x.value().middleCols(c * channel_size, channel_size))
                                                      .sum();
                                     }
                                     return std::vector<Mat>{gx, gv};
                                   });
}

// Mean softmax cross-entropy over rows; labels[r] is the target column of row r.
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  using Mat = Matrix<Scalar>;
  const Index n = logits.rows(), k = logits.cols();
  if (static_cast<Index>(labels.size()) != n || n == 0) {
    throw DimensionError("softmax_cross_entropy: one label per row required");
  }
  Mat probs(n, k);
  Scalar loss = 0;
  for (Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k) throw ContractError("softmax_cross_entropy: label out of range");
    const Scalar m = logits.value().row(r).maxCoeff();
    probs.row(r) = (logits.value().row(r).array() - m).exp().matrix();
    const Scalar z = probs.row(r).sum();
    probs.row(r) /= z;
    loss += std::log(z) + m - logits.value()(r, y);
  }
  Mat out(1, 1);
  out(0, 0) = loss / static_cast<Scalar>(n);
  std::vector<int> targets(labels.begin(), labels.end());
  return detail::tape_of(logits).record("softmax_cross_entropy", std::move(out), {logits},
                                        [probs = std::move(probs), targets = std::move(targets)](const Mat& g) {
                                          Mat gl = probs;
                                          for (Index r = 0; r < gl.rows(); ++r) gl(r, targets[r]) -= Scalar(1);
                                          gl *= g(0, 0) / static_cast<Scalar>(gl.rows());
                                          return std::vector<Mat>{gl};
                                        });
}

// Lowers a 3x3, stride-1, zero-padded convolution input to a patch matrix.
// x: batch x (channels*height*width), channel-major. Result rows are
// (image, pixel) pairs; columns are (channel, ky, kx).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> im2col3x3_values(
    const Eigen::MatrixBase<Derived>& x, Index channels, Index height, Index width) {
  using S = typename Derived::Scalar;
  const Index pixels = height * width;
  if (x.cols() != channels * pixels) throw DimensionError("im2col3x3: input width != channels*height*width");
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols =
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(x.rows() * pixels, channels * 9);
  for (Index b = 0; b < x.rows(); ++b) {
    for (Index y = 0; y < height; ++y) {
      for (Index xx = 0; xx < width; ++xx) {
        const Index row = b * pixels + y * width + xx;
        for (Index c = 0; c < channels; ++c) {
          for (Index ky = 0; ky < 3; ++ky) {
            const Index sy = y + ky - 1;
            if (sy < 0 || sy >= height) continue;
            for (Index kx = 0; kx < 3; ++kx) {
              const Index sx = xx + kx - 1;
              if (sx < 0 || sx >= width) continue;
              cols(row, c * 9 + ky * 3 + kx) = x(b, c * pixels + sy * width + sx);
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
Var<Scalar> im2col3x3(const Var<Scalar>& x, Index channels, Index height, Index width) {
  using Mat = Matrix<Scalar>;
  Mat out = im2col3x3_values(x.value(), channels, height, width);
  const Index batch = x.rows();
  return detail::tape_of(x).record(
      "im2col3x3", std::move(out), {x}, [batch, channels, height, width](const Mat& g) {
        const Index pixels = height * width;
        Mat gx = Mat::Zero(batch, channels * pixels);
        for (Index b = 0; b < batch; ++b) {
          for (Index y = 0; y < height; ++y) {
            for (Index xx = 0; xx < width; ++xx) {
              const Index row = b * pixels + y * width + xx;
              for (Index c = 0; c < channels; ++c) {
                for (Index ky = 0; ky < 3; ++ky) {
                  const Index sy = y + ky - 1;
                  if (sy < 0 || sy >= height) continue;
                  for (Index kx = 0; kx < 3; ++kx) {
                    const Index sx = xx + kx - 1;
                    if (sx < 0 || sx >= width) continue;
                    gx(b, c * pixels + sy * width + sx) += g(row, c * 9 + ky * 3 + kx);
                  }
                }
              }
            }
          }
        }
        return std::vector<Mat>{gx};
      });
}

// (batch*pixels) x channels  ->  batch x (channels*pixels), channel-major.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pixels_to_channels_values(
    const Eigen::MatrixBase<Derived>& z, Index batch, Index pixels) {
  using S = typename Derived::Scalar;
  if (z.rows() != batch * pixels) throw DimensionError("pixels_to_channels: row count != batch*pixels");
  const Index channels = z.cols();
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(batch, channels * pixels);
  for (Index b = 0; b < batch; ++b)
    for (Index p = 0; p < pixels; ++p)
      for (Index c = 0; c < channels; ++c) out(b, c * pixels + p) = z(b * pixels + p, c);
  return out;
}

template <typename Scalar>
Var<Scalar> pixels_to_channels(const Var<Scalar>& z, Index batch, Index pixels) {
  using Mat = Matrix<Scalar>;
  Mat out = pixels_to_channels_values(z.value(), batch, pixels);
  const Index channels = z.cols();
  return detail::tape_of(z).record("pixels_to_channels", std::move(out), {z},
                                   [batch, pixels, channels](const Mat& g) {
                                     Mat gz(batch * pixels, channels);
                                     for (Index b = 0; b < batch; ++b)
                                       for (Index p = 0; p < pixels; ++p)
                                         for (Index c = 0; c < channels; ++c)
                                           gz(b * pixels + p, c) = g(b, c * pixels + p);
                                     return std::vector<Mat>{gz};
                                   });
}

template <typename Scalar>
using CustomForwardFn = std::function<Matrix<Scalar>(const std::vector<const Matrix<Scalar>*>& inputs)>;

template <typename Scalar>
using CustomBackwardFn = std::function<std::vector<Matrix<Scalar>>(
    const Matrix<Scalar>& upstream, const std::vector<const Matrix<Scalar>*>& inputs, const Matrix<Scalar>& output)>;

// Records a node whose backward is `backward` verbatim, regardless of what
// `forward` computes. The node is flagged as custom-gradient.
template <typename Scalar>
Var<Scalar> custom_node(CustomForwardFn<Scalar> forward, CustomBackwardFn<Scalar> backward,
                        std::vector<Var<Scalar>> inputs, std::string op = "custom") {
  using Mat = Matrix<Scalar>;
  if (inputs.empty()) throw ContractError("custom_node: at least one input required");
  if (!forward) throw ContractError("custom_node: forward function required");
  Tape<Scalar>& tape = detail::tape_of(inputs.front());
  std::vector<const Mat*> in_values;
  for (const auto& v : inputs) in_values.push_back(&v.value());
  Mat out = forward(in_values);

  const std::size_t out_id = tape.size();
  typename Tape<Scalar>::BackwardFn bw;
  if (backward) {
    bw = [&tape, inputs, out_id, backward = std::move(backward)](const Mat& g) {
      std::vector<const Mat*> vals;
      for (const auto& v : inputs) vals.push_back(&v.value());
      return backward(g, vals, tape.value(Var<Scalar>(&tape, out_id)));
    };
  }
  return tape.record(std::move(op), std::move(out), std::move(inputs), std::move(bw), true);
}

}  // namespace n2uq
