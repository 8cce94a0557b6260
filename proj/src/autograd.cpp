#include "ocnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "ocnet/errors.hpp"

namespace ocnet::ag {

namespace {

std::shared_ptr<Node> make_node(Tensor value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ValidationError(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                          " vs " + b.value().shape_str());
  }
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::scalar() const {
  if (node_->value.size() != 1) {
    throw ValidationError("scalar() on tensor of size " +
                          std::to_string(node_->value.size()));
  }
  return node_->value[0];
}

Var Var::from_node(std::shared_ptr<Node> n) {
  Var v;
  v.node_ = std::move(n);
  return v;
}

Var constant(Tensor t) { return Var(std::move(t), false); }
Var leaf(Tensor t) { return Var(std::move(t), true); }

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a.value();
  out.add_scaled(b.value(), 1.0);
  auto pa = a.node(), pb = b.node();
  return Var::from_node(make_node(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->ensure_grad().add_scaled(self.grad, 1.0);
    if (pb->requires_grad) pb->ensure_grad().add_scaled(self.grad, 1.0);
  }));
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.value();
  out.add_scaled(b.value(), -1.0);
  auto pa = a.node(), pb = b.node();
  return Var::from_node(make_node(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->ensure_grad().add_scaled(self.grad, 1.0);
    if (pb->requires_grad) pb->ensure_grad().add_scaled(self.grad, -1.0);
  }));
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.value();
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] *= b.value()[i];
  auto pa = a.node(), pb = b.node();
  return Var::from_node(make_node(std::move(out), {pa, pb}, [pa, pb, n](Node& self) {
    if (pa->requires_grad) {
      Tensor& g = pa->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      Tensor& g = pb->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * pa->value[i];
    }
  }));
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] *= s;
  auto pa = a.node();
  return Var::from_node(make_node(std::move(out), {pa}, [pa, s](Node& self) {
    if (pa->requires_grad) pa->ensure_grad().add_scaled(self.grad, s);
  }));
}

Var add_const(const Var& a, double c) {
  Tensor out = a.value();
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] += c;
  auto pa = a.node();
  return Var::from_node(make_node(std::move(out), {pa}, [pa](Node& self) {
    if (pa->requires_grad) pa->ensure_grad().add_scaled(self.grad, 1.0);
  }));
}

Var relu(const Var& x) {
  Tensor out = x.value();
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  auto px = x.node();
  return Var::from_node(make_node(std::move(out), {px}, [px, n](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      if (px->value[i] > 0.0) g[i] += self.grad[i];
    }
  }));
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  auto px = x.node();
  auto node = make_node(std::move(out), {px}, [px, n](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
  return Var::from_node(node);
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1) {
    throw ValidationError("linear: expected x[B,I], w[O,I], b[O]");
  }
  const int B = xv.dim(0), I = xv.dim(1), O = wv.dim(0);
  if (wv.dim(1) != I || bv.dim(0) != O) {
    throw ValidationError("linear: dim mismatch x" + xv.shape_str() + " w" + wv.shape_str());
  }
  Tensor out({B, O});
  for (int i = 0; i < B; ++i) {
    const double* xr = xv.data() + static_cast<std::int64_t>(i) * I;
    double* or_ = out.data() + static_cast<std::int64_t>(i) * O;
    for (int o = 0; o < O; ++o) {
      const double* wr = wv.data() + static_cast<std::int64_t>(o) * I;
      double acc = bv[o];
      for (int k = 0; k < I; ++k) acc += xr[k] * wr[k];
      or_[o] = acc;
    }
  }
  auto px = x.node(), pw = w.node(), pb = b.node();
  return Var::from_node(
      make_node(std::move(out), {px, pw, pb}, [px, pw, pb, B, I, O](Node& self) {
        if (px->requires_grad) {
          Tensor& gx = px->ensure_grad();
          for (int i = 0; i < B; ++i) {
            const double* gr = self.grad.data() + static_cast<std::int64_t>(i) * O;
            double* gxr = gx.data() + static_cast<std::int64_t>(i) * I;
            for (int o = 0; o < O; ++o) {
              const double go = gr[o];
              if (go == 0.0) continue;
              const double* wr = pw->value.data() + static_cast<std::int64_t>(o) * I;
              for (int k = 0; k < I; ++k) gxr[k] += go * wr[k];
            }
          }
        }
        if (pw->requires_grad) {
          Tensor& gw = pw->ensure_grad();
          for (int i = 0; i < B; ++i) {
            const double* gr = self.grad.data() + static_cast<std::int64_t>(i) * O;
            const double* xr = px->value.data() + static_cast<std::int64_t>(i) * I;
            for (int o = 0; o < O; ++o) {
              const double go = gr[o];
              if (go == 0.0) continue;
              double* gwr = gw.data() + static_cast<std::int64_t>(o) * I;
              for (int k = 0; k < I; ++k) gwr[k] += go * xr[k];
            }
          }
        }
        if (pb->requires_grad) {
          Tensor& gb = pb->ensure_grad();
          for (int i = 0; i < B; ++i) {
            const double* gr = self.grad.data() + static_cast<std::int64_t>(i) * O;
            for (int o = 0; o < O; ++o) gb[o] += gr[o];
          }
        }
      }));
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 4 || wv.rank() != 4 || bv.rank() != 1) {
    throw ValidationError("conv2d: expected x[B,C,H,W], w[Co,Ci/g,kh,kw], b[Co]");
  }
  const int B = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Co = wv.dim(0), Cig = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  if (groups < 1 || Ci % groups != 0 || Co % groups != 0) {
    throw ConfigError("conv2d: channels not divisible by groups (Ci=" + std::to_string(Ci) +
                      ", Co=" + std::to_string(Co) + ", g=" + std::to_string(groups) + ")");
  }
  if (Cig != Ci / groups) {
    throw ConfigError("conv2d: weight input-channel dim " + std::to_string(Cig) +
                      " != Ci/groups = " + std::to_string(Ci / groups));
  }
  if (bv.dim(0) != Co) throw ConfigError("conv2d: bias dim != Co");
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: bad stride/pad");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ConfigError("conv2d: kernel larger than padded input");
  const int co_per_g = Co / groups;

  Tensor out({B, Co, Ho, Wo});
  for (int n = 0; n < B; ++n) {
    for (int co = 0; co < Co; ++co) {
      const int g = co / co_per_g;
      const int ci0 = g * Cig;
      for (int oh = 0; oh < Ho; ++oh) {
        const int ih0 = oh * stride - pad;
        for (int ow = 0; ow < Wo; ++ow) {
          const int iw0 = ow * stride - pad;
          double acc = bv[co];
          for (int c = 0; c < Cig; ++c) {
            for (int r = 0; r < kh; ++r) {
              const int ih = ih0 + r;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = &xv.at(n, ci0 + c, ih, 0);
              const double* wrow = &wv.at(co, c, r, 0);
              for (int s = 0; s < kw; ++s) {
                const int iw = iw0 + s;
                if (iw < 0 || iw >= W) continue;
                acc += xrow[iw] * wrow[s];
              }
            }
          }
          out.at(n, co, oh, ow) = acc;
        }
      }
    }
  }

  auto px = x.node(), pw = w.node(), pb = b.node();
  auto back = [px, pw, pb, B, Ci, H, W, Co, Cig, kh, kw, stride, pad, co_per_g](Node& self) {
    const int Ho = self.value.dim(2), Wo = self.value.dim(3);
    const bool need_x = px->requires_grad;
    const bool need_w = pw->requires_grad;
    const bool need_b = pb->requires_grad;
    Tensor* gx = need_x ? &px->ensure_grad() : nullptr;
    Tensor* gw = need_w ? &pw->ensure_grad() : nullptr;
    Tensor* gb = need_b ? &pb->ensure_grad() : nullptr;
    for (int n = 0; n < B; ++n) {
      for (int co = 0; co < Co; ++co) {
        const int g = co / co_per_g;
        const int ci0 = g * Cig;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih0 = oh * stride - pad;
          for (int ow = 0; ow < Wo; ++ow) {
            const double go = self.grad.at(n, co, oh, ow);
            if (go == 0.0) continue;
            if (need_b) (*gb)[co] += go;
            const int iw0 = ow * stride - pad;
            for (int c = 0; c < Cig; ++c) {
              for (int r = 0; r < kh; ++r) {
                const int ih = ih0 + r;
                if (ih < 0 || ih >= H) continue;
                const double* xrow = &px->value.at(n, ci0 + c, ih, 0);
                const double* wrow = &pw->value.at(co, c, r, 0);
                double* gxrow = need_x ? &gx->at(n, ci0 + c, ih, 0) : nullptr;
                double* gwrow = need_w ? &gw->at(co, c, r, 0) : nullptr;
                for (int s = 0; s < kw; ++s) {
                  const int iw = iw0 + s;
                  if (iw < 0 || iw >= W) continue;
                  if (need_x) gxrow[iw] += go * wrow[s];
                  if (need_w) gwrow[s] += go * xrow[iw];
                }
              }
            }
          }
        }
      }
    }
  };
  return Var::from_node(make_node(std::move(out), {px, pw, pb}, std::move(back)));
}

Var spatial_mean(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw ValidationError("spatial_mean: expected [B,C,H,W]");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const double inv = 1.0 / (static_cast<double>(H) * W);
  Tensor out({B, C});
  for (int n = 0; n < B; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* base = &xv.at(n, c, 0, 0);
      double acc = 0.0;
      for (int i = 0; i < H * W; ++i) acc += base[i];
      out.at(n, c) = acc * inv;
    }
  }
  auto px = x.node();
  return Var::from_node(make_node(std::move(out), {px}, [px, B, C, H, W, inv](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    for (int n = 0; n < B; ++n) {
      for (int c = 0; c < C; ++c) {
        const double go = self.grad.at(n, c) * inv;
        double* base = &g.at(n, c, 0, 0);
        for (int i = 0; i < H * W; ++i) base[i] += go;
      }
    }
  }));
}

Var crop(const Var& x, int h0, int w0, int hs, int ws) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw ValidationError("crop: expected [B,C,H,W]");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (h0 < 0 || w0 < 0 || hs < 1 || ws < 1 || h0 + hs > H || w0 + ws > W) {
    throw ConfigError("crop: window [" + std::to_string(h0) + "," + std::to_string(w0) +
                      ")+" + std::to_string(hs) + "x" + std::to_string(ws) +
                      " outside map " + xv.shape_str());
  }
  Tensor out({B, C, hs, ws});
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < hs; ++r)
        for (int s = 0; s < ws; ++s) out.at(n, c, r, s) = xv.at(n, c, h0 + r, w0 + s);
  auto px = x.node();
  return Var::from_node(make_node(std::move(out), {px}, [px, B, C, hs, ws, h0, w0](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (int r = 0; r < hs; ++r)
          for (int s = 0; s < ws; ++s) g.at(n, c, h0 + r, w0 + s) += self.grad.at(n, c, r, s);
  }));
}

Var slice_h(const Var& x, int h0, int h1) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw ValidationError("slice_h: expected [B,C,H,W]");
  return crop(x, h0, 0, h1 - h0, xv.dim(3));
}

Var flatten_hw(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) != 1) throw ValidationError("flatten_hw: expected [B,1,H,W]");
  const int B = xv.dim(0), N = xv.dim(2) * xv.dim(3);
  Tensor out({B, N});
  std::copy(xv.data(), xv.data() + xv.size(), out.data());
  auto px = x.node();
  return Var::from_node(make_node(std::move(out), {px}, [px](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  }));
}

Var softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ValidationError("softmax_rows: expected [B,N]");
  const int B = xv.dim(0), N = xv.dim(1);
  Tensor out({B, N});
  for (int i = 0; i < B; ++i) {
    const double* r = xv.data() + static_cast<std::int64_t>(i) * N;
    double* o = out.data() + static_cast<std::int64_t>(i) * N;
    double m = r[0];
    for (int k = 1; k < N; ++k) m = std::max(m, r[k]);
    double z = 0.0;
    for (int k = 0; k < N; ++k) {
      o[k] = std::exp(r[k] - m);
      z += o[k];
    }
    for (int k = 0; k < N; ++k) o[k] /= z;
  }
  auto px = x.node();
  return Var::from_node(make_node(std::move(out), {px}, [px, B, N](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    for (int i = 0; i < B; ++i) {
      const double* y = self.value.data() + static_cast<std::int64_t>(i) * N;
      const double* gy = self.grad.data() + static_cast<std::int64_t>(i) * N;
      double* gx = g.data() + static_cast<std::int64_t>(i) * N;
      double dot = 0.0;
      for (int k = 0; k < N; ++k) dot += gy[k] * y[k];
      for (int k = 0; k < N; ++k) gx[k] += y[k] * (gy[k] - dot);
    }
  }));
}

Var attend(const Var& p, const Var& v) {
  const Tensor& pv = p.value();
  const Tensor& vv = v.value();
  if (pv.rank() != 2 || vv.rank() != 4) throw ValidationError("attend: expected p[B,N], v[B,C,H,W]");
  const int B = pv.dim(0), N = pv.dim(1);
  const int C = vv.dim(1), HW = vv.dim(2) * vv.dim(3);
  if (vv.dim(0) != B || HW != N) {
    throw ValidationError("attend: p" + pv.shape_str() + " incompatible with v" + vv.shape_str());
  }
  Tensor out({B, C});
  for (int n = 0; n < B; ++n) {
    const double* pr = pv.data() + static_cast<std::int64_t>(n) * N;
    for (int c = 0; c < C; ++c) {
      const double* vr = vv.data() + (static_cast<std::int64_t>(n) * C + c) * N;
      double acc = 0.0;
      for (int k = 0; k < N; ++k) acc += pr[k] * vr[k];
      out.at(n, c) = acc;
    }
  }
  auto pp = p.node(), pvn = v.node();
  return Var::from_node(make_node(std::move(out), {pp, pvn}, [pp, pvn, B, C, N](Node& self) {
    for (int n = 0; n < B; ++n) {
      const double* pr = pp->value.data() + static_cast<std::int64_t>(n) * N;
      for (int c = 0; c < C; ++c) {
        const double go = self.grad.at(n, c);
        if (go == 0.0) continue;
        const double* vr = pvn->value.data() + (static_cast<std::int64_t>(n) * C + c) * N;
        if (pp->requires_grad) {
          double* gp = pp->ensure_grad().data() + static_cast<std::int64_t>(n) * N;
          for (int k = 0; k < N; ++k) gp[k] += go * vr[k];
        }
        if (pvn->requires_grad) {
          double* gv = pvn->ensure_grad().data() + (static_cast<std::int64_t>(n) * C + c) * N;
          for (int k = 0; k < N; ++k) gv[k] += go * pr[k];
        }
      }
    }
  }));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: empty input");
  const int B = parts[0].value().dim(0);
  int total = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = parts[i].value();
    if (t.rank() != 2 || t.dim(0) != B) {
      throw ValidationError("concat_cols: part " + std::to_string(i) + " has shape " +
                            t.shape_str() + ", expected [" + std::to_string(B) + ",*]");
    }
    total += t.dim(1);
  }
  Tensor out({B, total});
  int off = 0;
  for (const Var& part : parts) {
    const Tensor& t = part.value();
    const int d = t.dim(1);
    for (int n = 0; n < B; ++n) {
      const double* src = t.data() + static_cast<std::int64_t>(n) * d;
      double* dst = out.data() + static_cast<std::int64_t>(n) * total + off;
      std::copy(src, src + d, dst);
    }
    off += d;
  }
  std::vector<std::shared_ptr<Node>> pnodes;
  pnodes.reserve(parts.size());
  for (const Var& part : parts) pnodes.push_back(part.node());
  return Var::from_node(make_node(std::move(out), pnodes, [B, total](Node& self) {
    int off = 0;
    for (const auto& p : self.parents) {
      const int d = p->value.dim(1);
      if (p->requires_grad) {
        Tensor& g = p->ensure_grad();
        for (int n = 0; n < B; ++n) {
          const double* src = self.grad.data() + static_cast<std::int64_t>(n) * total + off;
          double* dst = g.data() + static_cast<std::int64_t>(n) * d;
          for (int k = 0; k < d; ++k) dst[k] += src[k];
        }
      }
      off += d;
    }
  }));
}

Var slice_cols(const Var& x, int c0, int c1) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ValidationError("slice_cols: expected [B,D]");
  const int B = xv.dim(0), D = xv.dim(1);
  if (c0 < 0 || c1 <= c0 || c1 > D) throw ValidationError("slice_cols: bad range");
  const int d = c1 - c0;
  Tensor out({B, d});
  for (int n = 0; n < B; ++n) {
    const double* src = xv.data() + static_cast<std::int64_t>(n) * D + c0;
    std::copy(src, src + d, out.data() + static_cast<std::int64_t>(n) * d);
  }
  auto px = x.node();
  return Var::from_node(make_node(std::move(out), {px}, [px, B, D, d, c0](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    for (int n = 0; n < B; ++n) {
      const double* src = self.grad.data() + static_cast<std::int64_t>(n) * d;
      double* dst = g.data() + static_cast<std::int64_t>(n) * D + c0;
      for (int k = 0; k < d; ++k) dst[k] += src[k];
    }
  }));
}

Var mean_all(const Var& x) {
  const std::int64_t n = x.value().size();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += x.value()[i];
  Tensor out({1});
  out[0] = acc / static_cast<double>(n);
  auto px = x.node();
  return Var::from_node(make_node(std::move(out), {px}, [px, n](Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad().add_scaled(Tensor(px->value.shape(), self.grad[0] / static_cast<double>(n)), 1.0);
  }));
}

Var sum_all(const Var& x) {
  const std::int64_t n = x.value().size();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += x.value()[i];
  Tensor out({1});
  out[0] = acc;
  auto px = x.node();
  return Var::from_node(make_node(std::move(out), {px}, [px](Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad().add_scaled(Tensor(px->value.shape(), self.grad[0]), 1.0);
  }));
}

Var rowwise_cosine(const Var& a, const Var& b, double eps) {
  check_same_shape(a, b, "rowwise_cosine");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2) throw ValidationError("rowwise_cosine: expected [B,D]");
  const int B = av.dim(0), D = av.dim(1);
  Tensor out({B});
  std::vector<double> nas(B), nbs(B), dots(B);
  for (int i = 0; i < B; ++i) {
    const double* ar = av.data() + static_cast<std::int64_t>(i) * D;
    const double* br = bv.data() + static_cast<std::int64_t>(i) * D;
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (int k = 0; k < D; ++k) {
      na += ar[k] * ar[k];
      nb += br[k] * br[k];
      dot += ar[k] * br[k];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na == 0.0 || nb == 0.0) {
      throw NumericError("rowwise_cosine: zero-norm vector at row " + std::to_string(i));
    }
    nas[i] = na;
    nbs[i] = nb;
    dots[i] = dot;
    out[i] = dot / ((na + eps) * (nb + eps));
  }
  auto pa = a.node(), pb = b.node();
  return Var::from_node(make_node(
      std::move(out), {pa, pb},
      [pa, pb, B, D, eps, nas = std::move(nas), nbs = std::move(nbs),
       dots = std::move(dots)](Node& self) {
        for (int i = 0; i < B; ++i) {
          const double g = self.grad[i];
          if (g == 0.0) continue;
          const double na = nas[i], nb = nbs[i], dot = dots[i];
          const double denom = (na + eps) * (nb + eps);
          const double* ar = pa->value.data() + static_cast<std::int64_t>(i) * D;
          const double* br = pb->value.data() + static_cast<std::int64_t>(i) * D;
          if (pa->requires_grad) {
            double* ga = pa->ensure_grad().data() + static_cast<std::int64_t>(i) * D;
            const double coef = dot * (nb + eps) / (denom * denom * na);
            for (int k = 0; k < D; ++k) ga[k] += g * (br[k] / denom - coef * ar[k]);
          }
          if (pb->requires_grad) {
            double* gb = pb->ensure_grad().data() + static_cast<std::int64_t>(i) * D;
            const double coef = dot * (na + eps) / (denom * denom * nb);
            for (int k = 0; k < D; ++k) gb[k] += g * (ar[k] / denom - coef * br[k]);
          }
        }
      }));
}

Var batchnorm1d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                bool training, double momentum, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ValidationError("batchnorm1d: expected [B,D]");
  const int B = xv.dim(0), D = xv.dim(1);
  if (gamma.value().rank() != 1 || gamma.value().dim(0) != D || beta.value().dim(0) != D) {
    throw ValidationError("batchnorm1d: affine params must be [D]");
  }
  if (!state.initialized) {
    state.running_mean = Tensor({D}, 0.0);
    state.running_var = Tensor({D}, 1.0);
    state.initialized = true;
  }

  Tensor mean({D}), var({D});
  if (training) {
    if (B < 2) throw ValidationError("batchnorm1d: training requires batch >= 2");
    for (int d = 0; d < D; ++d) {
      double m = 0.0;
      for (int i = 0; i < B; ++i) m += xv.at(i, d);
      m /= B;
      double v = 0.0;
      for (int i = 0; i < B; ++i) {
        const double c = xv.at(i, d) - m;
        v += c * c;
      }
      mean[d] = m;
      var[d] = v / B;  // biased, used for normalization
      state.running_mean[d] = (1.0 - momentum) * state.running_mean[d] + momentum * m;
      state.running_var[d] =
          (1.0 - momentum) * state.running_var[d] + momentum * (v / std::max(1, B - 1));
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  Tensor xhat({B, D});
  Tensor out({B, D});
  std::vector<double> inv_std(D);
  for (int d = 0; d < D; ++d) inv_std[d] = 1.0 / std::sqrt(var[d] + eps);
  for (int i = 0; i < B; ++i) {
    for (int d = 0; d < D; ++d) {
      const double xh = (xv.at(i, d) - mean[d]) * inv_std[d];
      xhat.at(i, d) = xh;
      out.at(i, d) = gamma.value()[d] * xh + beta.value()[d];
    }
  }

  auto px = x.node(), pg = gamma.node(), pbeta = beta.node();
  return Var::from_node(make_node(
      std::move(out), {px, pg, pbeta},
      [px, pg, pbeta, B, D, training, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node& self) {
        // dgamma/dbeta are shared by both modes.
        if (pg->requires_grad) {
          Tensor& gg = pg->ensure_grad();
          for (int d = 0; d < D; ++d) {
            double acc = 0.0;
            for (int i = 0; i < B; ++i) acc += self.grad.at(i, d) * xhat.at(i, d);
            gg[d] += acc;
          }
        }
        if (pbeta->requires_grad) {
          Tensor& gb = pbeta->ensure_grad();
          for (int d = 0; d < D; ++d) {
            double acc = 0.0;
            for (int i = 0; i < B; ++i) acc += self.grad.at(i, d);
            gb[d] += acc;
          }
        }
        if (!px->requires_grad) return;
        Tensor& gx = px->ensure_grad();
        if (!training) {
          for (int i = 0; i < B; ++i)
            for (int d = 0; d < D; ++d)
              gx.at(i, d) += self.grad.at(i, d) * pg->value[d] * inv_std[d];
          return;
        }
        // Training mode: mean/var depend on x.
        for (int d = 0; d < D; ++d) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int i = 0; i < B; ++i) {
            const double dy = self.grad.at(i, d) * pg->value[d];
            sum_dy += dy;
            sum_dy_xhat += dy * xhat.at(i, d);
          }
          for (int i = 0; i < B; ++i) {
            const double dy = self.grad.at(i, d) * pg->value[d];
            gx.at(i, d) += inv_std[d] *
                           (dy - sum_dy / B - xhat.at(i, d) * sum_dy_xhat / B);
          }
        }
      }));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) throw ValidationError("backward: loss must be scalar");
  if (!loss.requires_grad()) return;

  // Iterative topological order over the subgraph that requires grad.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

}  // namespace ocnet::ag
