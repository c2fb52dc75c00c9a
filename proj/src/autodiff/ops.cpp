// SPDX-License-Identifier: Apache-2.0

#include "mome/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace mome::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MutMap = Eigen::Map<RowMat>;

using detail::Node;

MutMap as_matrix(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MutMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

Shape matrix_shape_like(const Tensor& x, std::size_t rows, std::size_t cols) {
  if (x.rank() <= 1 && rows == 1) return {cols};
  return {rows, cols};
}

// Adds `g` into the parent's grad when the parent participates in the graph.
template <typename F>
void with_grad(Node& parent, F&& f) {
  if (parent.requires_grad) f(parent.grad_buffer());
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() == 0 || a.rank() > 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()));
  }
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  std::vector<double> out(p * r);
  as_matrix(out, p, r).noalias() = as_matrix(a.node()->value, p, q) * as_matrix(b.node()->value, q, r);
  return Tensor::make_result(matrix_shape_like(a, p, r), std::move(out), {a, b}, [p, q, r](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    auto dc = as_matrix(self.grad, p, r);
    with_grad(A, [&](auto& g) { as_matrix(g, p, q).noalias() += dc * as_matrix(B.value, q, r).transpose(); });
    with_grad(B, [&](auto& g) { as_matrix(g, q, r).noalias() += as_matrix(A.value, p, q).transpose() * dc; });
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_to_string(x.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  as_matrix(out, c, r) = as_matrix(x.node()->value, r, c).transpose();
  return Tensor::make_result({c, r}, std::move(out), {x}, [r, c](Node& self) {
    with_grad(*self.parents[0],
              [&](auto& g) { as_matrix(g, r, c) += as_matrix(self.grad, c, r).transpose(); });
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      with_grad(*self.parents[k], [&](auto& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    with_grad(*self.parents[1], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    with_grad(A, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    });
    with_grad(B, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    });
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || bias.size() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " does not fit " +
                         shape_to_string(x.shape()));
  }
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto bd = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bd[j];
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [r, c](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    with_grad(*self.parents[1], [&](auto& g) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    });
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
  });
}

Tensor scale_by(const Tensor& x, const Tensor& factor) {
  if (factor.size() != 1) throw DimensionError("scale_by: factor must be a scalar, got " + shape_to_string(factor.shape()));
  const double f = factor.item();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= f;
  return Tensor::make_result(x.shape(), std::move(out), {x, factor}, [](Node& self) {
    Node& X = *self.parents[0];
    Node& F = *self.parents[1];
    const double fv = F.value[0];
    with_grad(X, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += fv * self.grad[i];
    });
    with_grad(F, [&](auto& g) {
      double acc = 0.0;
      for (std::size_t i = 0; i < X.value.size(); ++i) acc += self.grad[i] * X.value[i];
      g[0] += acc;
    });
  });
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw DimensionError("add_n: no terms");
  std::vector<double> out(terms[0].data().begin(), terms[0].data().end());
  for (std::size_t k = 1; k < terms.size(); ++k) {
    require_same_shape(terms[0], terms[k], "add_n");
    const auto d = terms[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  return Tensor::make_result(terms[0].shape(), std::move(out), {terms.begin(), terms.end()}, [](Node& self) {
    for (auto& p : self.parents) {
      with_grad(*p, [&](auto& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& X = *self.parents[0];
    with_grad(X, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (X.value[i] > 0.0) g[i] += self.grad[i];
    });
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t c = x.rank() == 0 ? 1 : x.shape().back();
  if (c == 0) throw DimensionError("softmax_lastdim: empty last dimension");
  const std::size_t r = x.size() / c;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= total;
  }
  return Tensor::make_result(x.shape(), out, {x}, [r, c, y = out](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[i * c + j] * (self.grad[i * c + j] - dot);
      }
    });
  });
}

Tensor log_softmax_lastdim(const Tensor& x) {
  const std::size_t c = x.rank() == 0 ? 1 : x.shape().back();
  if (c == 0) throw DimensionError("log_softmax_lastdim: empty last dimension");
  const std::size_t r = x.size() / c;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
  }
  return Tensor::make_result(x.shape(), out, {x}, [r, c, y = out](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < r; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += self.grad[i * c + j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] - std::exp(y[i * c + j]) * total;
      }
    });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.rank() == 0 ? 1 : x.shape().back();
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: input " + shape_to_string(x.shape()) + " with gamma " +
                         shape_to_string(gamma.shape()) + " and beta " + shape_to_string(beta.shape()));
  }
  const std::size_t r = d == 0 ? 0 : x.size() / d;
  std::vector<double> xhat(x.size()), inv_sigma(r), out(x.size());
  const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xd[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double t = xd[i * d + j] - mu;
      var += t * t;
    }
    var /= static_cast<double>(d);
    inv_sigma[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xd[i * d + j] - mu) * inv_sigma[i];
      out[i * d + j] = gd[j] * xhat[i * d + j] + bd[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [r, d, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& self) {
        Node& X = *self.parents[0];
        Node& G = *self.parents[1];
        Node& B = *self.parents[2];
        const auto& dy = self.grad;
        with_grad(G, [&](auto& g) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += dy[i * d + j] * xhat[i * d + j];
        });
        with_grad(B, [&](auto& g) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += dy[i * d + j];
        });
        with_grad(X, [&](auto& g) {
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = dy[i * d + j] * G.value[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[i * d + j];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = dy[i * d + j] * G.value[j];
              g[i * d + j] += inv_sigma[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
            }
          }
        });
      });
}

Tensor mean_pool_rows(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  if (r == 0) throw DimensionError("mean_pool_rows: no rows to pool");
  std::vector<double> out(c, 0.0);
  const auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += xd[i * c + j];
  for (auto& v : out) v /= static_cast<double>(r);
  return Tensor::make_result({c}, std::move(out), {x}, [r, c](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) {
      const double inv = 1.0 / static_cast<double>(r);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
    });
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result({}, {total}, {x}, [](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) {
      for (auto& v : g) v += self.grad[0];
    });
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_sim");
  const auto ad = a.data(), bd = b.data();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    dot += ad[i] * bd[i];
    na2 += ad[i] * ad[i];
    nb2 += bd[i] * bd[i];
  }
  if (na2 == 0.0 || nb2 == 0.0) return Tensor::scalar(0.0);
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double c = dot / (na * nb);
  return Tensor::make_result({}, {c}, {a, b}, [na, nb, c](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    const double up = self.grad[0];
    with_grad(A, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * (B.value[i] / (na * nb) - c * A.value[i] / (na * na));
    });
    with_grad(B, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * (A.value[i] / (na * nb) - c * B.value[i] / (nb * nb));
    });
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin > end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                         shape_to_string(x.shape()));
  }
  const std::size_t c = x.cols();
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor::make_result({end - begin, c}, std::move(out), {x}, [begin, c](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
    });
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin > end || end > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                         shape_to_string(x.shape()));
  }
  const std::size_t r = x.rows(), c = x.cols(), w = end - begin;
  std::vector<double> out(r * w);
  const auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(i * c + begin), w, out.begin() + static_cast<std::ptrdiff_t>(i * w));
  return Tensor::make_result({r, w}, std::move(out), {x}, [r, c, w, begin](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
    });
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != c) {
      throw DimensionError("concat_rows: part " + shape_to_string(p.shape()) + " does not have " +
                           std::to_string(c) + " columns");
    }
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor::make_result({r, c}, std::move(out), {parts.begin(), parts.end()}, [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      with_grad(*p, [&](auto& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      });
      offset += p->value.size();
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != r) {
      throw DimensionError("concat_cols: part " + shape_to_string(p.shape()) + " does not have " +
                           std::to_string(r) + " rows");
    }
    c += p.cols();
  }
  std::vector<double> out(r * c);
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    const auto pd = p.data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(i * w), w, out.begin() + static_cast<std::ptrdiff_t>(i * c + offset));
    widths.push_back(w);
    offset += w;
  }
  return Tensor::make_result({r, c}, std::move(out), {parts.begin(), parts.end()},
                             [r, c, widths = std::move(widths)](Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 const std::size_t w = widths[k];
                                 with_grad(*self.parents[k], [&](auto& g) {
                                   for (std::size_t i = 0; i < r; ++i)
                                     for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * c + off + j];
                                 });
                                 off += w;
                               }
                             });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be a matrix, got " + shape_to_string(table.shape()));
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(v) + " rows");
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return Tensor::make_result({ids.size(), d}, std::move(out), {table},
                             [d, idx = std::vector<int>(ids.begin(), ids.end())](Node& self) {
                               with_grad(*self.parents[0], [&](auto& g) {
                                 for (std::size_t i = 0; i < idx.size(); ++i)
                                   for (std::size_t j = 0; j < d; ++j)
                                     g[static_cast<std::size_t>(idx[i]) * d + j] += self.grad[i * d + j];
                               });
                             });
}

Tensor pick(const Tensor& x, std::span<const int> cols) {
  const std::size_t r = x.rows(), c = x.cols();
  if (cols.size() != r) {
    throw DimensionError("pick: " + std::to_string(cols.size()) + " indices for " + shape_to_string(x.shape()));
  }
  std::vector<double> out(r);
  const auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= c) throw std::out_of_range("pick: column out of range");
    out[i] = xd[i * c + static_cast<std::size_t>(cols[i])];
  }
  return Tensor::make_result({r}, std::move(out), {x}, [c, idx = std::vector<int>(cols.begin(), cols.end())](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < idx.size(); ++i) g[i * c + static_cast<std::size_t>(idx[i])] += self.grad[i];
    });
  });
}

Tensor element(const Tensor& x, std::size_t flat_index) {
  if (flat_index >= x.size()) throw std::out_of_range("element: index past end of " + shape_to_string(x.shape()));
  return Tensor::make_result({}, {x.data()[flat_index]}, {x}, [flat_index](Node& self) {
    with_grad(*self.parents[0], [&](auto& g) { g[flat_index] += self.grad[0]; });
  });
}

}  // namespace mome::ad
