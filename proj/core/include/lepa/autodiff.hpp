#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "lepa/errors.hpp"

namespace lepa::ad {

// Dense row-major matrix. Row vectors are 1 x n.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, T(0)) {}
  Mat(int r, int c, std::vector<T> data) : rows(r), cols(c), a(std::move(data)) {}

  T& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  T operator()(int i, int j) const {
    return a[static_cast<std::size_t>(i) * cols + j];
  }
  T* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
  const T* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }
  std::size_t size() const { return a.size(); }
  bool empty() const { return a.empty(); }
};

// C += A * B
template <class T>
void matmul_acc(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
  for (int i = 0; i < A.rows; ++i) {
    const T* arow = A.row(i);
    T* crow = C.row(i);
    for (int k = 0; k < A.cols; ++k) {
      const T aik = arow[k];
      if (aik == T(0)) continue;
      const T* brow = B.row(k);
      for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C += A * B^T
template <class T>
void matmul_nt_acc(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
  for (int i = 0; i < A.rows; ++i) {
    const T* arow = A.row(i);
    T* crow = C.row(i);
    for (int j = 0; j < B.rows; ++j) {
      const T* brow = B.row(j);
      T acc = T(0);
      for (int k = 0; k < A.cols; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  }
}

// C += A^T * B
template <class T>
void matmul_tn_acc(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
  for (int k = 0; k < A.rows; ++k) {
    const T* arow = A.row(k);
    const T* brow = B.row(k);
    for (int i = 0; i < A.cols; ++i) {
      const T aki = arow[i];
      if (aki == T(0)) continue;
      T* crow = C.row(i);
      for (int j = 0; j < B.cols; ++j) crow[j] += aki * brow[j];
    }
  }
}

// Reverse-mode tape over Mat<T>. Build the graph with the op members; call
// backward() on a 1x1 loss node; read gradients of leaf nodes with grad().
// Node ids are topologically ordered by construction.
template <class T>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var leaf(Mat<T> value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
  }
  Var constant(Mat<T> value) { return leaf(std::move(value), false); }

  const Mat<T>& val(Var v) const { return nodes_[v.id].value; }

  // Gradient of the loss w.r.t. this node; zeros if backward never reached it.
  Mat<T> grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Mat<T>(n.value.rows, n.value.cols);
    return n.grad;
  }

  // y = a + b (same shape)
  Var add(Var a, Var b) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    check(A.rows == B.rows && A.cols == B.cols, "add: shape mismatch");
    Mat<T> y = A;
    for (std::size_t i = 0; i < y.size(); ++i) y.a[i] += B.a[i];
    return unary_binary(std::move(y), a, b, [](Tape& t, int yi, int ai, int bi) {
      const Mat<T>& gy = t.nodes_[yi].grad;
      t.accumulate(ai, gy);
      t.accumulate(bi, gy);
    });
  }

  // y = a + row vector rv broadcast over rows
  Var add_rowvec(Var a, Var rv) {
    const Mat<T>& A = val(a);
    const Mat<T>& R = val(rv);
    check(R.rows == 1 && R.cols == A.cols, "add_rowvec: shape mismatch");
    Mat<T> y = A;
    for (int i = 0; i < y.rows; ++i) {
      T* row = y.row(i);
      for (int j = 0; j < y.cols; ++j) row[j] += R.a[j];
    }
    return unary_binary(std::move(y), a, rv, [](Tape& t, int yi, int ai, int bi) {
      const Mat<T>& gy = t.nodes_[yi].grad;
      t.accumulate(ai, gy);
      if (t.nodes_[bi].needs_grad) {
        Mat<T>& gb = t.grad_ref(bi);
        for (int i = 0; i < gy.rows; ++i) {
          const T* row = gy.row(i);
          for (int j = 0; j < gy.cols; ++j) gb.a[j] += row[j];
        }
      }
    });
  }

  // y = a * (row vector rv) elementwise, broadcast over rows
  Var mul_rowvec(Var a, Var rv) {
    const Mat<T>& A = val(a);
    const Mat<T>& R = val(rv);
    check(R.rows == 1 && R.cols == A.cols, "mul_rowvec: shape mismatch");
    Mat<T> y = A;
    for (int i = 0; i < y.rows; ++i) {
      T* row = y.row(i);
      for (int j = 0; j < y.cols; ++j) row[j] *= R.a[j];
    }
    return unary_binary(std::move(y), a, rv, [](Tape& t, int yi, int ai, int bi) {
      const Mat<T>& gy = t.nodes_[yi].grad;
      const Mat<T>& A = t.nodes_[ai].value;
      const Mat<T>& R = t.nodes_[bi].value;
      if (t.nodes_[ai].needs_grad) {
        Mat<T>& ga = t.grad_ref(ai);
        for (int i = 0; i < gy.rows; ++i) {
          const T* gr = gy.row(i);
          T* gar = ga.row(i);
          for (int j = 0; j < gy.cols; ++j) gar[j] += gr[j] * R.a[j];
        }
      }
      if (t.nodes_[bi].needs_grad) {
        Mat<T>& gb = t.grad_ref(bi);
        for (int i = 0; i < gy.rows; ++i) {
          const T* gr = gy.row(i);
          const T* ar = A.row(i);
          for (int j = 0; j < gy.cols; ++j) gb.a[j] += gr[j] * ar[j];
        }
      }
    });
  }

  Var scale(Var a, T s) {
    Mat<T> y = val(a);
    for (auto& v : y.a) v *= s;
    const int ai = a.id;
    return push(std::move(y), nodes_[ai].needs_grad, [ai, s](Tape& t, int yi) {
      const Mat<T>& gy = t.nodes_[yi].grad;
      if (!t.nodes_[ai].needs_grad) return;
      Mat<T>& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) ga.a[i] += s * gy.a[i];
    });
  }

  // y = a * b
  Var matmul(Var a, Var b) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    check(A.cols == B.rows, "matmul: inner dim mismatch");
    Mat<T> y(A.rows, B.cols);
    matmul_acc(A, B, y);
    return unary_binary(std::move(y), a, b, [](Tape& t, int yi, int ai, int bi) {
      const Mat<T>& gy = t.nodes_[yi].grad;
      if (t.nodes_[ai].needs_grad) {
        matmul_nt_acc(gy, t.nodes_[bi].value, t.grad_ref(ai));  // dA += gY B^T
      }
      if (t.nodes_[bi].needs_grad) {
        matmul_tn_acc(t.nodes_[ai].value, gy, t.grad_ref(bi));  // dB += A^T gY
      }
    });
  }

  // y = a * b^T
  Var matmul_nt(Var a, Var b) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    check(A.cols == B.cols, "matmul_nt: inner dim mismatch");
    Mat<T> y(A.rows, B.rows);
    matmul_nt_acc(A, B, y);
    return unary_binary(std::move(y), a, b, [](Tape& t, int yi, int ai, int bi) {
      const Mat<T>& gy = t.nodes_[yi].grad;
      if (t.nodes_[ai].needs_grad) {
        matmul_acc(gy, t.nodes_[bi].value, t.grad_ref(ai));  // dA += gY B
      }
      if (t.nodes_[bi].needs_grad) {
        matmul_tn_acc(gy, t.nodes_[ai].value, t.grad_ref(bi));  // dB += gY^T A
      }
    });
  }

  // y = x * w^T + b with w [out, in], b [1, out]
  Var linear(Var x, Var w, Var b) {
    Var y = matmul_nt(x, w);
    return add_rowvec(y, b);
  }

  Var softmax_rows(Var a) {
    Mat<T> y = val(a);
    for (int i = 0; i < y.rows; ++i) {
      T* row = y.row(i);
      T mx = row[0];
      for (int j = 1; j < y.cols; ++j) mx = std::max(mx, row[j]);
      T sum = T(0);
      for (int j = 0; j < y.cols; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      const T inv = T(1) / sum;
      for (int j = 0; j < y.cols; ++j) row[j] *= inv;
    }
    const int ai = a.id;
    return push(std::move(y), nodes_[ai].needs_grad, [ai](Tape& t, int yi) {
      if (!t.nodes_[ai].needs_grad) return;
      const Mat<T>& y = t.nodes_[yi].value;
      const Mat<T>& gy = t.nodes_[yi].grad;
      Mat<T>& ga = t.grad_ref(ai);
      for (int i = 0; i < y.rows; ++i) {
        const T* yr = y.row(i);
        const T* gr = gy.row(i);
        T dot = T(0);
        for (int j = 0; j < y.cols; ++j) dot += yr[j] * gr[j];
        T* gar = ga.row(i);
        for (int j = 0; j < y.cols; ++j) gar[j] += yr[j] * (gr[j] - dot);
      }
    });
  }

  // Per-row normalization to zero mean, unit variance (population), no affine.
  Var layernorm_rows(Var a, T eps) {
    const Mat<T>& A = val(a);
    Mat<T> y(A.rows, A.cols);
    Mat<T> inv_sigma(A.rows, 1);
    for (int i = 0; i < A.rows; ++i) {
      const T* ar = A.row(i);
      T mean = T(0);
      for (int j = 0; j < A.cols; ++j) mean += ar[j];
      mean /= T(A.cols);
      T var = T(0);
      for (int j = 0; j < A.cols; ++j) {
        const T d = ar[j] - mean;
        var += d * d;
      }
      var /= T(A.cols);
      const T inv = T(1) / std::sqrt(var + eps);
      inv_sigma(i, 0) = inv;
      T* yr = y.row(i);
      for (int j = 0; j < A.cols; ++j) yr[j] = (ar[j] - mean) * inv;
    }
    const int ai = a.id;
    auto sig = std::make_shared<Mat<T>>(std::move(inv_sigma));
    return push(std::move(y), nodes_[ai].needs_grad, [ai, sig](Tape& t, int yi) {
      if (!t.nodes_[ai].needs_grad) return;
      const Mat<T>& y = t.nodes_[yi].value;
      const Mat<T>& gy = t.nodes_[yi].grad;
      Mat<T>& ga = t.grad_ref(ai);
      const int n = y.cols;
      for (int i = 0; i < y.rows; ++i) {
        const T* yr = y.row(i);
        const T* gr = gy.row(i);
        T mean_g = T(0), mean_gy = T(0);
        for (int j = 0; j < n; ++j) {
          mean_g += gr[j];
          mean_gy += gr[j] * yr[j];
        }
        mean_g /= T(n);
        mean_gy /= T(n);
        const T inv = (*sig)(i, 0);
        T* gar = ga.row(i);
        for (int j = 0; j < n; ++j) {
          gar[j] += inv * (gr[j] - mean_g - yr[j] * mean_gy);
        }
      }
    });
  }

  // y = layernorm(a) * gamma + beta
  Var layernorm_affine(Var a, Var gamma, Var beta, T eps) {
    return add_rowvec(mul_rowvec(layernorm_rows(a, eps), gamma), beta);
  }

  // Exact GELU: 0.5 x (1 + erf(x / sqrt(2)))
  Var gelu(Var a) {
    const Mat<T>& A = val(a);
    Mat<T> y = A;
    for (auto& v : y.a) {
      v = T(0.5) * v * (T(1) + std::erf(v * T(0.7071067811865475)));
    }
    const int ai = a.id;
    return push(std::move(y), nodes_[ai].needs_grad, [ai](Tape& t, int yi) {
      if (!t.nodes_[ai].needs_grad) return;
      const Mat<T>& x = t.nodes_[ai].value;
      const Mat<T>& gy = t.nodes_[yi].grad;
      Mat<T>& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x.a[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(0.7071067811865475)));
        const T pdf = std::exp(T(-0.5) * v * v) * T(0.3989422804014327);
        ga.a[i] += gy.a[i] * (cdf + v * pdf);
      }
    });
  }

  Var concat_cols(Var a, Var b) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    check(A.rows == B.rows, "concat_cols: row mismatch");
    Mat<T> y(A.rows, A.cols + B.cols);
    for (int i = 0; i < A.rows; ++i) {
      T* yr = y.row(i);
      const T* ar = A.row(i);
      const T* br = B.row(i);
      for (int j = 0; j < A.cols; ++j) yr[j] = ar[j];
      for (int j = 0; j < B.cols; ++j) yr[A.cols + j] = br[j];
    }
    const int ac = A.cols;
    return unary_binary(std::move(y), a, b,
                        [ac](Tape& t, int yi, int ai, int bi) {
      const Mat<T>& gy = t.nodes_[yi].grad;
      if (t.nodes_[ai].needs_grad) {
        Mat<T>& ga = t.grad_ref(ai);
        for (int i = 0; i < gy.rows; ++i) {
          const T* gr = gy.row(i);
          T* gar = ga.row(i);
          for (int j = 0; j < ga.cols; ++j) gar[j] += gr[j];
        }
      }
      if (t.nodes_[bi].needs_grad) {
        Mat<T>& gb = t.grad_ref(bi);
        for (int i = 0; i < gy.rows; ++i) {
          const T* gr = gy.row(i) + ac;
          T* gbr = gb.row(i);
          for (int j = 0; j < gb.cols; ++j) gbr[j] += gr[j];
        }
      }
    });
  }

  Var concat_rows(Var a, Var b) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    check(A.cols == B.cols, "concat_rows: col mismatch");
    Mat<T> y(A.rows + B.rows, A.cols);
    std::copy(A.a.begin(), A.a.end(), y.a.begin());
    std::copy(B.a.begin(), B.a.end(), y.a.begin() + A.size());
    const int ar = A.rows;
    return unary_binary(std::move(y), a, b,
                        [ar](Tape& t, int yi, int ai, int bi) {
      const Mat<T>& gy = t.nodes_[yi].grad;
      if (t.nodes_[ai].needs_grad) {
        Mat<T>& ga = t.grad_ref(ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga.a[i] += gy.a[i];
      }
      if (t.nodes_[bi].needs_grad) {
        Mat<T>& gb = t.grad_ref(bi);
        const std::size_t off = static_cast<std::size_t>(ar) * gy.cols;
        for (std::size_t i = 0; i < gb.size(); ++i) gb.a[i] += gy.a[off + i];
      }
    });
  }

  // Columns [c0, c1) of a.
  Var slice_cols(Var a, int c0, int c1) {
    const Mat<T>& A = val(a);
    check(0 <= c0 && c0 < c1 && c1 <= A.cols, "slice_cols: bad range");
    Mat<T> y(A.rows, c1 - c0);
    for (int i = 0; i < A.rows; ++i) {
      const T* ar = A.row(i) + c0;
      T* yr = y.row(i);
      for (int j = 0; j < y.cols; ++j) yr[j] = ar[j];
    }
    const int ai = a.id;
    return push(std::move(y), nodes_[ai].needs_grad, [ai, c0](Tape& t, int yi) {
      if (!t.nodes_[ai].needs_grad) return;
      const Mat<T>& gy = t.nodes_[yi].grad;
      Mat<T>& ga = t.grad_ref(ai);
      for (int i = 0; i < gy.rows; ++i) {
        const T* gr = gy.row(i);
        T* gar = ga.row(i) + c0;
        for (int j = 0; j < gy.cols; ++j) gar[j] += gr[j];
      }
    });
  }

  // Rows of a selected by idx (duplicates allowed).
  Var gather_rows(Var a, std::vector<int> idx) {
    const Mat<T>& A = val(a);
    Mat<T> y(static_cast<int>(idx.size()), A.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      check(idx[i] >= 0 && idx[i] < A.rows, "gather_rows: index out of range");
      const T* ar = A.row(idx[i]);
      T* yr = y.row(static_cast<int>(i));
      for (int j = 0; j < A.cols; ++j) yr[j] = ar[j];
    }
    const int ai = a.id;
    auto shared = std::make_shared<std::vector<int>>(std::move(idx));
    return push(std::move(y), nodes_[ai].needs_grad,
                [ai, shared](Tape& t, int yi) {
      if (!t.nodes_[ai].needs_grad) return;
      const Mat<T>& gy = t.nodes_[yi].grad;
      Mat<T>& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < shared->size(); ++i) {
        const T* gr = gy.row(static_cast<int>(i));
        T* gar = ga.row((*shared)[i]);
        for (int j = 0; j < gy.cols; ++j) gar[j] += gr[j];
      }
    });
  }

  // [1, n] -> [m, n]
  Var broadcast_row(Var rv, int m) {
    const Mat<T>& R = val(rv);
    check(R.rows == 1, "broadcast_row: expects a row vector");
    Mat<T> y(m, R.cols);
    for (int i = 0; i < m; ++i) {
      T* yr = y.row(i);
      for (int j = 0; j < R.cols; ++j) yr[j] = R.a[j];
    }
    const int ai = rv.id;
    return push(std::move(y), nodes_[ai].needs_grad, [ai](Tape& t, int yi) {
      if (!t.nodes_[ai].needs_grad) return;
      const Mat<T>& gy = t.nodes_[yi].grad;
      Mat<T>& ga = t.grad_ref(ai);
      for (int i = 0; i < gy.rows; ++i) {
        const T* gr = gy.row(i);
        for (int j = 0; j < gy.cols; ++j) ga.a[j] += gr[j];
      }
    });
  }

  // Mean over all elements of (a - b)^2; result is 1x1.
  Var mse(Var a, Var b) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    check(A.rows == B.rows && A.cols == B.cols, "mse: shape mismatch");
    T acc = T(0);
    for (std::size_t i = 0; i < A.size(); ++i) {
      const T d = A.a[i] - B.a[i];
      acc += d * d;
    }
    Mat<T> y(1, 1);
    y.a[0] = acc / T(A.size());
    return unary_binary(std::move(y), a, b, [](Tape& t, int yi, int ai, int bi) {
      const T g = t.nodes_[yi].grad.a[0];
      const Mat<T>& A = t.nodes_[ai].value;
      const Mat<T>& B = t.nodes_[bi].value;
      const T c = g * T(2) / T(A.size());
      if (t.nodes_[ai].needs_grad) {
        Mat<T>& ga = t.grad_ref(ai);
        for (std::size_t i = 0; i < A.size(); ++i) {
          ga.a[i] += c * (A.a[i] - B.a[i]);
        }
      }
      if (t.nodes_[bi].needs_grad) {
        Mat<T>& gb = t.grad_ref(bi);
        for (std::size_t i = 0; i < A.size(); ++i) {
          gb.a[i] -= c * (A.a[i] - B.a[i]);
        }
      }
    });
  }

  void backward(Var loss) {
    Node& ln = nodes_[loss.id];
    check(ln.value.rows == 1 && ln.value.cols == 1, "backward: loss must be 1x1");
    grad_ref(loss.id).a[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;  // empty until first accumulation
    bool needs_grad = false;
    std::function<void(Tape&, int)> backward;
  };

  // deque: val()/grad() references stay valid while the graph grows
  std::deque<Node> nodes_;

  static void check(bool ok, const char* msg) {
    if (!ok) throw NumericError(msg);
  }

  Var push(Mat<T> value, bool needs_grad, std::function<void(Tape&, int)> bw) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <class F>
  Var unary_binary(Mat<T> y, Var a, Var b, F f) {
    const int ai = a.id, bi = b.id;
    const bool ng = nodes_[ai].needs_grad || nodes_[bi].needs_grad;
    return push(std::move(y), ng,
                [ai, bi, f](Tape& t, int yi) { f(t, yi, ai, bi); });
  }

  Mat<T>& grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Mat<T>(n.value.rows, n.value.cols);
    return n.grad;
  }

  void accumulate(int id, const Mat<T>& g) {
    if (!nodes_[id].needs_grad) return;
    Mat<T>& dst = grad_ref(id);
    for (std::size_t i = 0; i < g.size(); ++i) dst.a[i] += g.a[i];
  }
};

}  // namespace lepa::ad
