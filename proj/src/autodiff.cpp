#include "latflow/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "latflow/error.hpp"

namespace latflow::ad {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

Value make(Tensor val, std::vector<Value> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    for (const auto& p : parents)
        if (p && p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    // Constant subgraphs record nothing, so inference costs forward math only.
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

// ----- broadcasting machinery (right-aligned, numpy rules) -----

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    const int r = std::max(ra, rb);
    Shape out(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const std::int64_t da = i < ra ? a[static_cast<std::size_t>(ra - 1 - i)] : 1;
        const std::int64_t db = i < rb ? b[static_cast<std::size_t>(rb - 1 - i)] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[static_cast<std::size_t>(r - 1 - i)] = std::max(da, db);
    }
    return out;
}

// Strides of `in` aligned to an output of shape `out`; 0 where broadcast.
std::vector<std::int64_t> bcast_strides(const Shape& in, const Shape& out) {
    const auto st = row_strides(in);
    const int ri = static_cast<int>(in.size()), ro = static_cast<int>(out.size());
    std::vector<std::int64_t> r(static_cast<std::size_t>(ro), 0);
    for (int i = 0; i < ri; ++i) {
        const int oi = ro - 1 - i, ii = ri - 1 - i;
        if (in[static_cast<std::size_t>(ii)] == out[static_cast<std::size_t>(oi)] &&
            in[static_cast<std::size_t>(ii)] != 1)
            r[static_cast<std::size_t>(oi)] = st[static_cast<std::size_t>(ii)];
    }
    return r;
}

// out[i] = f(a[offa(i)], b[offb(i)]) with odometer index walking.
template <class F>
void bcast_apply(const Tensor& a, const Tensor& b, Tensor& out, F&& f) {
    const std::int64_t n = out.numel();
    if (shape_eq(a.shape, b.shape) && shape_eq(a.shape, out.shape)) {
        for (std::int64_t i = 0; i < n; ++i) out.data[i] = f(a.data[i], b.data[i]);
        return;
    }
    const auto sa = bcast_strides(a.shape, out.shape);
    const auto sb = bcast_strides(b.shape, out.shape);
    const int r = out.rank();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t offa = 0, offb = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        out.data[i] = f(a.data[offa], b.data[offb]);
        for (int d = r - 1; d >= 0; --d) {
            const auto ud = static_cast<std::size_t>(d);
            ++idx[ud];
            offa += sa[ud];
            offb += sb[ud];
            if (idx[ud] < out.shape[ud]) break;
            offa -= sa[ud] * out.shape[ud];
            offb -= sb[ud] * out.shape[ud];
            idx[ud] = 0;
        }
    }
}

// Accumulates g into `to`, summing over axes that were broadcast on the way out.
void reduce_into(const Tensor& g, Tensor& to) {
    if (shape_eq(g.shape, to.shape)) {
        for (std::int64_t i = 0; i < g.numel(); ++i) to.data[i] += g.data[i];
        return;
    }
    const auto st = bcast_strides(to.shape, g.shape);
    const int r = g.rank();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t off = 0;
    const std::int64_t n = g.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        to.data[off] += g.data[i];
        for (int d = r - 1; d >= 0; --d) {
            const auto ud = static_cast<std::size_t>(d);
            ++idx[ud];
            off += st[ud];
            if (idx[ud] < g.shape[ud]) break;
            off -= st[ud] * g.shape[ud];
            idx[ud] = 0;
        }
    }
}

std::int64_t rows_of(const Shape& s) {
    if (s.empty()) throw ShapeError("expected rank >= 1");
    std::int64_t r = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
    return r;
}

template <class FWD, class BWD>
Value unary_op(const Value& x, FWD&& f, BWD&& df) {
    Tensor out(x->val.shape);
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data[i] = f(x->val.data[i]);
    return make(std::move(out), {x}, [df](Node& self) {
        Value& p = self.parents[0];
        Tensor& pg = p->ensure_grad();
        const std::int64_t n = self.val.numel();
        for (std::int64_t i = 0; i < n; ++i)
            pg.data[i] += self.grad.data[i] * df(p->val.data[i], self.val.data[i]);
    });
}

} // namespace

Tensor& Node::ensure_grad() {
    if (grad.data.empty()) grad = Tensor(val.shape);
    return grad;
}

Value constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    return n;
}

Value leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = true;
    return n;
}

// ----- elementwise -----

Value add(const Value& a, const Value& b) {
    Tensor out(broadcast_shape(a->val.shape, b->val.shape));
    bcast_apply(a->val, b->val, out, [](float x, float y) { return x + y; });
    return make(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) reduce_into(self.grad, self.parents[0]->ensure_grad());
        if (self.parents[1]->requires_grad) reduce_into(self.grad, self.parents[1]->ensure_grad());
    });
}

Value sub(const Value& a, const Value& b) {
    Tensor out(broadcast_shape(a->val.shape, b->val.shape));
    bcast_apply(a->val, b->val, out, [](float x, float y) { return x - y; });
    return make(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) reduce_into(self.grad, self.parents[0]->ensure_grad());
        if (self.parents[1]->requires_grad) {
            Tensor neg(self.grad.shape);
            for (std::int64_t i = 0; i < neg.numel(); ++i) neg.data[i] = -self.grad.data[i];
            reduce_into(neg, self.parents[1]->ensure_grad());
        }
    });
}

Value mul(const Value& a, const Value& b) {
    Tensor out(broadcast_shape(a->val.shape, b->val.shape));
    bcast_apply(a->val, b->val, out, [](float x, float y) { return x * y; });
    return make(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            Tensor ga(self.grad.shape);
            bcast_apply(self.grad, self.parents[1]->val, ga, [](float g, float y) { return g * y; });
            reduce_into(ga, self.parents[0]->ensure_grad());
        }
        if (self.parents[1]->requires_grad) {
            Tensor gb(self.grad.shape);
            bcast_apply(self.grad, self.parents[0]->val, gb, [](float g, float x) { return g * x; });
            reduce_into(gb, self.parents[1]->ensure_grad());
        }
    });
}

Value scale(const Value& a, double s) {
    const float fs = static_cast<float>(s);
    return unary_op(
        a, [fs](float x) { return x * fs; }, [fs](float, float) { return fs; });
}

Value add_scalar(const Value& a, double s) {
    const float fs = static_cast<float>(s);
    return unary_op(
        a, [fs](float x) { return x + fs; }, [](float, float) { return 1.0f; });
}

// ----- activations -----

Value silu(const Value& x) {
    return unary_op(
        x,
        [](float v) {
            const float s = 1.0f / (1.0f + std::exp(-v));
            return v * s;
        },
        [](float v, float) {
            const float s = 1.0f / (1.0f + std::exp(-v));
            return s * (1.0f + v * (1.0f - s));
        });
}

Value gelu(const Value& x) {
    constexpr float c = 0.7978845608028654f; // sqrt(2/pi)
    constexpr float k = 0.044715f;
    return unary_op(
        x,
        [](float v) {
            const float t = std::tanh(c * (v + k * v * v * v));
            return 0.5f * v * (1.0f + t);
        },
        [](float v, float) {
            const float t = std::tanh(c * (v + k * v * v * v));
            const float dt = (1.0f - t * t) * c * (1.0f + 3.0f * k * v * v);
            return 0.5f * (1.0f + t) + 0.5f * v * dt;
        });
}

Value tanh_op(const Value& x) {
    return unary_op(
        x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

// ----- linear algebra -----

static Value linear_impl(const Value& x, const Value& W, const Value* b) {
    if (W->val.rank() != 2) throw ShapeError("linear: weight must be rank 2");
    const std::int64_t in = W->val.shape[0], outw = W->val.shape[1];
    if (x->val.rank() < 1 || x->val.shape.back() != in)
        throw ShapeError("linear: input " + shape_str(x->val.shape) + " incompatible with weight " +
                         shape_str(W->val.shape));
    if (b && (*b)->val.numel() != outw) throw ShapeError("linear: bias size mismatch");

    const std::int64_t R = rows_of(x->val.shape);
    Shape oshape = x->val.shape;
    oshape.back() = outw;
    Tensor out(oshape);
    {
        CMapRM X(x->val.ptr(), R, in);
        CMapRM Wm(W->val.ptr(), in, outw);
        MapRM Y(out.ptr(), R, outw);
        Y.noalias() = X * Wm;
        if (b) {
            CMapRM bm((*b)->val.ptr(), 1, outw);
            Y.rowwise() += bm.row(0);
        }
    }
    std::vector<Value> parents = b ? std::vector<Value>{x, W, *b} : std::vector<Value>{x, W};
    return make(std::move(out), std::move(parents), [R, in, outw](Node& self) {
        Value& px = self.parents[0];
        Value& pw = self.parents[1];
        CMapRM dY(self.grad.ptr(), R, outw);
        if (px->requires_grad) {
            CMapRM Wm(pw->val.ptr(), in, outw);
            MapRM dX(px->ensure_grad().ptr(), R, in);
            dX.noalias() += dY * Wm.transpose();
        }
        if (pw->requires_grad) {
            CMapRM X(px->val.ptr(), R, in);
            MapRM dW(pw->ensure_grad().ptr(), in, outw);
            dW.noalias() += X.transpose() * dY;
        }
        if (self.parents.size() == 3 && self.parents[2]->requires_grad) {
            MapRM db(self.parents[2]->ensure_grad().ptr(), 1, outw);
            db.row(0) += dY.colwise().sum();
        }
    });
}

Value linear(const Value& x, const Value& W, const Value& b) { return linear_impl(x, W, &b); }
Value linear(const Value& x, const Value& W) { return linear_impl(x, W, nullptr); }

Value matmul(const Value& a, const Value& b) {
    if (a->val.rank() < 2) throw ShapeError("matmul: lhs rank must be >= 2");
    return linear_impl(a, b, nullptr);
}

// ----- attention -----

Value attention(const Value& q, const Value& k, const Value& v) {
    const auto& qs = q->val.shape;
    const auto& ks = k->val.shape;
    if (qs.size() < 2 || ks.size() != qs.size() || !shape_eq(k->val.shape, v->val.shape))
        throw ShapeError("attention: bad operand ranks");
    for (std::size_t i = 0; i + 2 < qs.size(); ++i)
        if (qs[i] != ks[i]) throw ShapeError("attention: leading dims differ");
    const std::int64_t dh = qs.back();
    if (ks.back() != dh) throw ShapeError("attention: head dims differ");
    const std::int64_t Sq = qs[qs.size() - 2], Sk = ks[ks.size() - 2];
    std::int64_t B = 1;
    for (std::size_t i = 0; i + 2 < qs.size(); ++i) B *= qs[i];
    const float sc = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor out(qs);
    Tensor probs({B, Sq, Sk});
    for (std::int64_t b = 0; b < B; ++b) {
        CMapRM Q(q->val.ptr() + b * Sq * dh, Sq, dh);
        CMapRM K(k->val.ptr() + b * Sk * dh, Sk, dh);
        CMapRM V(v->val.ptr() + b * Sk * dh, Sk, dh);
        MapRM P(probs.ptr() + b * Sq * Sk, Sq, Sk);
        P.noalias() = Q * K.transpose() * sc;
        for (std::int64_t i = 0; i < Sq; ++i) {
            float m = P.row(i).maxCoeff();
            double z = 0.0;
            for (std::int64_t j = 0; j < Sk; ++j) {
                const float e = std::exp(P(i, j) - m);
                P(i, j) = e;
                z += e;
            }
            P.row(i) /= static_cast<float>(z);
        }
        MapRM O(out.ptr() + b * Sq * dh, Sq, dh);
        O.noalias() = P * V;
    }
    return make(std::move(out), {q, k, v},
                [B, Sq, Sk, dh, sc, probs = std::move(probs)](Node& self) {
                    Value& pq = self.parents[0];
                    Value& pk = self.parents[1];
                    Value& pv = self.parents[2];
                    MatRM dP(Sq, Sk), dS(Sq, Sk);
                    for (std::int64_t b = 0; b < B; ++b) {
                        CMapRM P(probs.ptr() + b * Sq * Sk, Sq, Sk);
                        CMapRM dO(self.grad.ptr() + b * Sq * dh, Sq, dh);
                        CMapRM Q(pq->val.ptr() + b * Sq * dh, Sq, dh);
                        CMapRM K(pk->val.ptr() + b * Sk * dh, Sk, dh);
                        CMapRM V(pv->val.ptr() + b * Sk * dh, Sk, dh);
                        if (pv->requires_grad) {
                            MapRM dV(pv->ensure_grad().ptr() + b * Sk * dh, Sk, dh);
                            dV.noalias() += P.transpose() * dO;
                        }
                        dP.noalias() = dO * V.transpose();
                        // softmax jacobian: dS = P .* (dP - rowsum(dP .* P))
                        for (std::int64_t i = 0; i < Sq; ++i) {
                            const float rs = (dP.row(i).array() * P.row(i).array()).sum();
                            dS.row(i) = P.row(i).array() * (dP.row(i).array() - rs);
                        }
                        if (pq->requires_grad) {
                            MapRM dQ(pq->ensure_grad().ptr() + b * Sq * dh, Sq, dh);
                            dQ.noalias() += dS * K * sc;
                        }
                        if (pk->requires_grad) {
                            MapRM dK(pk->ensure_grad().ptr() + b * Sk * dh, Sk, dh);
                            dK.noalias() += dS.transpose() * Q * sc;
                        }
                    }
                });
}

Value rope(const Value& x, double base) {
    const auto& s = x->val.shape;
    if (s.size() < 2) throw ShapeError("rope: rank must be >= 2");
    const std::int64_t dh = s.back();
    if (dh % 2 != 0) throw ShapeError("rope: head dim must be even");
    const std::int64_t S = s[s.size() - 2];
    std::int64_t B = 1;
    for (std::size_t i = 0; i + 2 < s.size(); ++i) B *= s[i];
    const std::int64_t half = dh / 2;

    // Angle tables, shared by forward and backward.
    Tensor cosv({S, half}), sinv({S, half});
    for (std::int64_t p = 0; p < S; ++p)
        for (std::int64_t j = 0; j < half; ++j) {
            const double th = static_cast<double>(p) *
                              std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dh));
            cosv.data[p * half + j] = static_cast<float>(std::cos(th));
            sinv.data[p * half + j] = static_cast<float>(std::sin(th));
        }

    Tensor out(s);
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t p = 0; p < S; ++p) {
            const float* xi = x->val.ptr() + (b * S + p) * dh;
            float* yo = out.ptr() + (b * S + p) * dh;
            const float* c = cosv.ptr() + p * half;
            const float* sn = sinv.ptr() + p * half;
            for (std::int64_t j = 0; j < half; ++j) {
                const float x0 = xi[2 * j], x1 = xi[2 * j + 1];
                yo[2 * j] = x0 * c[j] - x1 * sn[j];
                yo[2 * j + 1] = x0 * sn[j] + x1 * c[j];
            }
        }
    return make(std::move(out), {x},
                [B, S, dh, half, cosv = std::move(cosv), sinv = std::move(sinv)](Node& self) {
                    Value& p0 = self.parents[0];
                    Tensor& pg = p0->ensure_grad();
                    for (std::int64_t b = 0; b < B; ++b)
                        for (std::int64_t p = 0; p < S; ++p) {
                            const float* go = self.grad.ptr() + (b * S + p) * dh;
                            float* gi = pg.ptr() + (b * S + p) * dh;
                            const float* c = cosv.ptr() + p * half;
                            const float* sn = sinv.ptr() + p * half;
                            // inverse rotation
                            for (std::int64_t j = 0; j < half; ++j) {
                                const float g0 = go[2 * j], g1 = go[2 * j + 1];
                                gi[2 * j] += g0 * c[j] + g1 * sn[j];
                                gi[2 * j + 1] += -g0 * sn[j] + g1 * c[j];
                            }
                        }
                });
}

// ----- normalization -----

Value layer_norm(const Value& x, double eps) {
    const std::int64_t C = x->val.shape.empty() ? 1 : x->val.shape.back();
    const std::int64_t R = x->val.numel() / C;
    Tensor out(x->val.shape);
    Tensor inv({R});
    for (std::int64_t r = 0; r < R; ++r) {
        const float* xi = x->val.ptr() + r * C;
        double mu = 0.0;
        for (std::int64_t c = 0; c < C; ++c) mu += xi[c];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            const double d = xi[c] - mu;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const float iv = static_cast<float>(1.0 / std::sqrt(var + eps));
        inv.data[r] = iv;
        float* yo = out.ptr() + r * C;
        for (std::int64_t c = 0; c < C; ++c)
            yo[c] = (xi[c] - static_cast<float>(mu)) * iv;
    }
    return make(std::move(out), {x}, [R, C, inv = std::move(inv)](Node& self) {
        Value& p = self.parents[0];
        Tensor& pg = p->ensure_grad();
        for (std::int64_t r = 0; r < R; ++r) {
            const float* y = self.val.ptr() + r * C;
            const float* g = self.grad.ptr() + r * C;
            float* o = pg.ptr() + r * C;
            double mg = 0.0, mgy = 0.0;
            for (std::int64_t c = 0; c < C; ++c) {
                mg += g[c];
                mgy += g[c] * y[c];
            }
            mg /= static_cast<double>(C);
            mgy /= static_cast<double>(C);
            for (std::int64_t c = 0; c < C; ++c)
                o[c] += inv.data[r] * static_cast<float>(g[c] - mg - y[c] * mgy);
        }
    });
}

Value softmax(const Value& x) {
    const std::int64_t C = x->val.shape.empty() ? 1 : x->val.shape.back();
    const std::int64_t R = x->val.numel() / C;
    Tensor out(x->val.shape);
    for (std::int64_t r = 0; r < R; ++r) {
        const float* xi = x->val.ptr() + r * C;
        float* yo = out.ptr() + r * C;
        float m = xi[0];
        for (std::int64_t c = 1; c < C; ++c) m = std::max(m, xi[c]);
        double z = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            yo[c] = std::exp(xi[c] - m);
            z += yo[c];
        }
        for (std::int64_t c = 0; c < C; ++c) yo[c] = static_cast<float>(yo[c] / z);
    }
    return make(std::move(out), {x}, [R, C](Node& self) {
        Value& p = self.parents[0];
        Tensor& pg = p->ensure_grad();
        for (std::int64_t r = 0; r < R; ++r) {
            const float* y = self.val.ptr() + r * C;
            const float* g = self.grad.ptr() + r * C;
            float* o = pg.ptr() + r * C;
            double dot = 0.0;
            for (std::int64_t c = 0; c < C; ++c) dot += g[c] * y[c];
            for (std::int64_t c = 0; c < C; ++c)
                o[c] += y[c] * static_cast<float>(g[c] - dot);
        }
    });
}

// ----- shape ops -----

Value reshape(const Value& x, Shape s) {
    if (shape_numel(s) != x->val.numel())
        throw ShapeError("reshape: " + shape_str(x->val.shape) + " -> " + shape_str(s) +
                         " changes element count");
    Tensor out;
    out.shape = std::move(s);
    out.data = x->val.data;
    return make(std::move(out), {x}, [](Node& self) {
        Tensor& pg = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) pg.data[i] += self.grad.data[i];
    });
}

Value permute(const Value& x, const std::vector<int>& axes) {
    const int r = x->val.rank();
    if (static_cast<int>(axes.size()) != r) throw ShapeError("permute: axes size mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    Shape os(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const int a = axes[static_cast<std::size_t>(i)];
        if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)])
            throw ShapeError("permute: bad axis list");
        seen[static_cast<std::size_t>(a)] = true;
        os[static_cast<std::size_t>(i)] = x->val.shape[static_cast<std::size_t>(a)];
    }
    const auto ist = row_strides(x->val.shape);
    std::vector<std::int64_t> step(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        step[static_cast<std::size_t>(i)] = ist[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];

    Tensor out(os);
    const std::int64_t n = out.numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t off = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        out.data[i] = x->val.data[off];
        for (int d = r - 1; d >= 0; --d) {
            const auto ud = static_cast<std::size_t>(d);
            ++idx[ud];
            off += step[ud];
            if (idx[ud] < os[ud]) break;
            off -= step[ud] * os[ud];
            idx[ud] = 0;
        }
    }
    return make(std::move(out), {x}, [r, os, step](Node& self) {
        Tensor& pg = self.parents[0]->ensure_grad();
        const std::int64_t n = self.grad.numel();
        std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
        std::int64_t off = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            pg.data[off] += self.grad.data[i];
            for (int d = r - 1; d >= 0; --d) {
                const auto ud = static_cast<std::size_t>(d);
                ++idx[ud];
                off += step[ud];
                if (idx[ud] < os[ud]) break;
                off -= step[ud] * os[ud];
                idx[ud] = 0;
            }
        }
    });
}

Value slice(const Value& x, int axis, std::int64_t start, std::int64_t len) {
    const int r = x->val.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("slice: bad axis");
    const std::int64_t dim = x->val.shape[static_cast<std::size_t>(axis)];
    if (start < 0 || len < 0 || start + len > dim) throw ShapeError("slice: range out of bounds");
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x->val.shape[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= x->val.shape[static_cast<std::size_t>(i)];
    Shape os = x->val.shape;
    os[static_cast<std::size_t>(axis)] = len;
    Tensor out(os);
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(x->val.ptr() + (o * dim + start) * inner, len * inner,
                    out.ptr() + o * len * inner);
    return make(std::move(out), {x}, [outer, inner, dim, start, len](Node& self) {
        Tensor& pg = self.parents[0]->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            const float* g = self.grad.ptr() + o * len * inner;
            float* t = pg.ptr() + (o * dim + start) * inner;
            for (std::int64_t i = 0; i < len * inner; ++i) t[i] += g[i];
        }
    });
}

Value concat(const std::vector<Value>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const int r = xs[0]->val.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("concat: bad axis");
    std::int64_t total = 0;
    for (const auto& x : xs) {
        if (x->val.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && x->val.shape[static_cast<std::size_t>(i)] != xs[0]->val.shape[static_cast<std::size_t>(i)])
                throw ShapeError("concat: non-axis dims differ");
        total += x->val.shape[static_cast<std::size_t>(axis)];
    }
    Shape os = xs[0]->val.shape;
    os[static_cast<std::size_t>(axis)] = total;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<std::size_t>(i)];

    Tensor out(os);
    std::vector<std::int64_t> lens;
    lens.reserve(xs.size());
    std::int64_t at = 0;
    for (const auto& x : xs) {
        const std::int64_t l = x->val.shape[static_cast<std::size_t>(axis)];
        lens.push_back(l);
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(x->val.ptr() + o * l * inner, l * inner,
                        out.ptr() + (o * total + at) * inner);
        at += l;
    }
    return make(std::move(out), xs, [outer, inner, total, lens](Node& self) {
        std::int64_t at = 0;
        for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
            const std::int64_t l = lens[pi];
            if (self.parents[pi]->requires_grad) {
                Tensor& pg = self.parents[pi]->ensure_grad();
                for (std::int64_t o = 0; o < outer; ++o) {
                    const float* g = self.grad.ptr() + (o * total + at) * inner;
                    float* t = pg.ptr() + o * l * inner;
                    for (std::int64_t i = 0; i < l * inner; ++i) t[i] += g[i];
                }
            }
            at += l;
        }
    });
}

// ----- gather -----

Value embed(const Value& table, const std::vector<std::int64_t>& idx) {
    if (table->val.rank() != 2) throw ShapeError("embed: table must be rank 2");
    const std::int64_t V = table->val.shape[0], D = table->val.shape[1];
    for (auto i : idx)
        if (i < 0 || i >= V) throw RangeError("embed: index out of range");
    const std::int64_t n = static_cast<std::int64_t>(idx.size());
    Tensor out({n, D});
    for (std::int64_t r = 0; r < n; ++r)
        std::copy_n(table->val.ptr() + idx[static_cast<std::size_t>(r)] * D, D, out.ptr() + r * D);
    return make(std::move(out), {table}, [idx, D](Node& self) {
        Tensor& pg = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const float* g = self.grad.ptr() + static_cast<std::int64_t>(r) * D;
            float* t = pg.ptr() + idx[r] * D;
            for (std::int64_t c = 0; c < D; ++c) t[c] += g[c];
        }
    });
}

// ----- reductions and losses -----

Value sum_all(const Value& x) {
    double s = 0.0;
    for (std::int64_t i = 0; i < x->val.numel(); ++i) s += x->val.data[i];
    return make(Tensor::scalar(static_cast<float>(s)), {x}, [](Node& self) {
        Tensor& pg = self.parents[0]->ensure_grad();
        const float g = self.grad.data[0];
        for (auto& v : pg.data) v += g;
    });
}

Value mean_all(const Value& x) {
    const std::int64_t n = x->val.numel();
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += x->val.data[i];
    return make(Tensor::scalar(static_cast<float>(s / static_cast<double>(n))), {x},
                [n](Node& self) {
                    Tensor& pg = self.parents[0]->ensure_grad();
                    const float g = self.grad.data[0] / static_cast<float>(n);
                    for (auto& v : pg.data) v += g;
                });
}

Value mse(const Value& a, const Value& b) {
    if (!shape_eq(a->val.shape, b->val.shape)) throw ShapeError("mse: shape mismatch");
    const std::int64_t n = a->val.numel();
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a->val.data[i]) - b->val.data[i];
        s += d * d;
    }
    return make(Tensor::scalar(static_cast<float>(s / static_cast<double>(n))), {a, b},
                [n](Node& self) {
                    const float g = self.grad.data[0] * 2.0f / static_cast<float>(n);
                    Value& pa = self.parents[0];
                    Value& pb = self.parents[1];
                    for (std::int64_t i = 0; i < n; ++i) {
                        const float d = pa->val.data[i] - pb->val.data[i];
                        if (pa->requires_grad) pa->ensure_grad().data[i] += g * d;
                        if (pb->requires_grad) pb->ensure_grad().data[i] -= g * d;
                    }
                });
}

Value cross_entropy_mean(const Value& logits, const std::vector<std::int64_t>& labels) {
    if (logits->val.rank() != 2) throw ShapeError("cross_entropy: logits must be [N, K]");
    const std::int64_t N = logits->val.shape[0], K = logits->val.shape[1];
    if (static_cast<std::int64_t>(labels.size()) != N)
        throw ShapeError("cross_entropy: label count mismatch");
    for (auto l : labels)
        if (l < 0 || l >= K) throw RangeError("cross_entropy: label out of range");

    Tensor probs({N, K});
    double loss = 0.0;
    for (std::int64_t r = 0; r < N; ++r) {
        const float* xi = logits->val.ptr() + r * K;
        float* p = probs.ptr() + r * K;
        float m = xi[0];
        for (std::int64_t c = 1; c < K; ++c) m = std::max(m, xi[c]);
        double z = 0.0;
        for (std::int64_t c = 0; c < K; ++c) {
            p[c] = std::exp(xi[c] - m);
            z += p[c];
        }
        for (std::int64_t c = 0; c < K; ++c) p[c] = static_cast<float>(p[c] / z);
        loss -= std::log(std::max(1e-30, static_cast<double>(p[labels[static_cast<std::size_t>(r)]])));
    }
    return make(Tensor::scalar(static_cast<float>(loss / static_cast<double>(N))), {logits},
                [N, K, labels, probs = std::move(probs)](Node& self) {
                    Tensor& pg = self.parents[0]->ensure_grad();
                    const float g = self.grad.data[0] / static_cast<float>(N);
                    for (std::int64_t r = 0; r < N; ++r) {
                        const float* p = probs.ptr() + r * K;
                        float* t = pg.ptr() + r * K;
                        for (std::int64_t c = 0; c < K; ++c) t[c] += g * p[c];
                        t[labels[static_cast<std::size_t>(r)]] -= g;
                    }
                });
}

Value pairwise_dist(const Value& x) {
    if (x->val.rank() < 2) throw ShapeError("pairwise_dist: rank must be >= 2");
    const std::int64_t D = x->val.shape.back();
    const std::int64_t N = x->val.shape[x->val.shape.size() - 2];
    std::int64_t B = 1;
    for (std::size_t i = 0; i + 2 < x->val.shape.size(); ++i) B *= x->val.shape[i];
    Shape os(x->val.shape.begin(), x->val.shape.end() - 2);
    os.push_back(N);
    os.push_back(N);

    Tensor out(os);
    for (std::int64_t b = 0; b < B; ++b) {
        const float* xb = x->val.ptr() + b * N * D;
        float* ob = out.ptr() + b * N * N;
        for (std::int64_t i = 0; i < N; ++i) {
            ob[i * N + i] = 0.0f;
            for (std::int64_t j = i + 1; j < N; ++j) {
                double s = 0.0;
                for (std::int64_t d = 0; d < D; ++d) {
                    const double df = static_cast<double>(xb[i * D + d]) - xb[j * D + d];
                    s += df * df;
                }
                const float dist = static_cast<float>(std::sqrt(s));
                ob[i * N + j] = dist;
                ob[j * N + i] = dist;
            }
        }
    }
    return make(std::move(out), {x}, [B, N, D](Node& self) {
        Value& p = self.parents[0];
        Tensor& pg = p->ensure_grad();
        for (std::int64_t b = 0; b < B; ++b) {
            const float* xb = p->val.ptr() + b * N * D;
            const float* dist = self.val.ptr() + b * N * N;
            const float* g = self.grad.ptr() + b * N * N;
            float* gx = pg.ptr() + b * N * D;
            for (std::int64_t i = 0; i < N; ++i)
                for (std::int64_t j = 0; j < N; ++j) {
                    if (i == j) continue;
                    const float dij = dist[i * N + j];
                    // coincident points: distance has no defined direction, skip
                    if (dij <= 1e-12f) continue;
                    const float w = g[i * N + j] / dij;
                    for (std::int64_t d = 0; d < D; ++d) {
                        const float diff = xb[i * D + d] - xb[j * D + d];
                        gx[i * D + d] += w * diff;
                        gx[j * D + d] -= w * diff;
                    }
                }
        }
    });
}

// ----- backward driver -----

void backward(const Value& root) {
    if (!root) throw Error("backward: null root");
    if (root->val.numel() != 1) throw ShapeError("backward: root must be scalar");
    if (!root->requires_grad) return;

    // Iterative post-order DFS; children (parents in graph terms) first.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i].get();
            ++i;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root->ensure_grad().data[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.data.empty()) n->backward_fn(*n);
    }
}

} // namespace latflow::ad
