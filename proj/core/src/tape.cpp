#include "mkcaps/tape.hpp"

#include <algorithm>
#include <cmath>

#include "mkcaps/errors.hpp"

namespace mkcaps::ad {
namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
}

void squash_row(const double* s, double* v, std::size_t len) {
    double sq = 0.0;
    for (std::size_t i = 0; i < len; ++i) sq += s[i] * s[i];
    const double r = std::sqrt(sq);
    if (r < 1e-12) {
        std::fill(v, v + len, 0.0);
        return;
    }
    const double h = r / (1.0 + sq);
    for (std::size_t i = 0; i < len; ++i) v[i] = h * s[i];
}

// grad of squash_row: J = h I + (h'/r) s s^T with h = r/(1+r^2).
void squash_row_grad(const double* s, const double* g, double* gs, std::size_t len) {
    double sq = 0.0;
    for (std::size_t i = 0; i < len; ++i) sq += s[i] * s[i];
    const double r = std::sqrt(sq);
    if (r < 1e-12) return;
    const double denom = 1.0 + sq;
    const double h = r / denom;
    const double hp = (1.0 - sq) / (denom * denom);
    double sg = 0.0;
    for (std::size_t i = 0; i < len; ++i) sg += s[i] * g[i];
    const double k = hp / r * sg;
    for (std::size_t i = 0; i < len; ++i) gs[i] += h * g[i] + k * s[i];
}

void softmax_row(const double* x, double* y, std::size_t n) {
    const double m = *std::max_element(x, x + n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - m);
        sum += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= sum;
}

void conv2d_valid_impl(const Tensor& input, const Tensor& weight, const Tensor& bias, Tensor& out) {
    const std::size_t h = input.extent(0), w = input.extent(1);
    const std::size_t f = weight.extent(0), kh = weight.extent(1), kw = weight.extent(2);
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    for (std::size_t fi = 0; fi < f; ++fi) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = bias[fi];
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const double* irow = input.data() + (oy + ky) * w + ox;
                    const double* wrow = weight.data() + (fi * kh + ky) * kw;
                    for (std::size_t kx = 0; kx < kw; ++kx) acc += irow[kx] * wrow[kx];
                }
                out.data()[(fi * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

struct AddOp final : OpBase {
    const char* name() const override { return "add"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        check_same_shape(*in[0], *in[1], "add");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i];
        return out;
    }
    void grad(const std::vector<const Tensor*>&, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        for (Tensor* g : gin) {
            if (!g) continue;
            for (std::size_t i = 0; i < gout.size(); ++i) (*g)[i] += gout[i];
        }
    }
};

struct ScaleOp final : OpBase {
    double factor;
    explicit ScaleOp(double f) : factor(f) {}
    const char* name() const override { return "scale"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
        return out;
    }
    void grad(const std::vector<const Tensor*>&, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += factor * gout[i];
    }
};

struct MulOp final : OpBase {
    const char* name() const override { return "mul"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        check_same_shape(*in[0], *in[1], "mul");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        for (std::size_t i = 0; i < gout.size(); ++i) {
            if (gin[0]) (*gin[0])[i] += gout[i] * (*in[1])[i];
            if (gin[1]) (*gin[1])[i] += gout[i] * (*in[0])[i];
        }
    }
};

struct SumOp final : OpBase {
    const char* name() const override { return "sum"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        double acc = 0.0;
        for (double v : in[0]->values()) acc += v;
        return Tensor::scalar(acc);
    }
    void grad(const std::vector<const Tensor*>&, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < gin[0]->size(); ++i) (*gin[0])[i] += gout[0];
    }
};

struct MeanScalarsOp final : OpBase {
    const char* name() const override { return "mean_scalars"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        double acc = 0.0;
        for (const Tensor* t : in) acc += (*t)[0];
        return Tensor::scalar(acc / static_cast<double>(in.size()));
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        const double share = gout[0] / static_cast<double>(in.size());
        for (Tensor* g : gin)
            if (g) (*g)[0] += share;
    }
};

struct ReluOp final : OpBase {
    const char* name() const override { return "relu"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < gout.size(); ++i)
            if ((*in[0])[i] > 0.0) (*gin[0])[i] += gout[i];
    }
};

struct ApplyMaskOp final : OpBase {
    Tensor mask;
    explicit ApplyMaskOp(Tensor m) : mask(std::move(m)) {}
    const char* name() const override { return "apply_mask"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        check_same_shape(*in[0], mask, "apply_mask");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
        return out;
    }
    void grad(const std::vector<const Tensor*>&, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += gout[i] * mask[i];
    }
};

struct Conv2dOp final : OpBase {
    const char* name() const override { return "conv2d_valid"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        const Tensor& input = *in[0];
        const Tensor& weight = *in[1];
        const Tensor& bias = *in[2];
        if (input.rank() != 2 || weight.rank() != 3 || bias.rank() != 1)
            throw DimensionError("conv2d_valid: expected input [H,W], weight [F,kh,kw], bias [F]");
        if (weight.extent(0) != bias.extent(0))
            throw DimensionError("conv2d_valid: filter count mismatch between weight and bias");
        if (weight.extent(1) > input.extent(0) || weight.extent(2) > input.extent(1))
            throw DimensionError("conv2d_valid: kernel " + shape_string(weight.shape()) +
                                 " larger than input " + shape_string(input.shape()));
        Tensor out({weight.extent(0), input.extent(0) - weight.extent(1) + 1,
                    input.extent(1) - weight.extent(2) + 1});
        conv2d_valid_impl(input, weight, bias, out);
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor& out, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        const Tensor& input = *in[0];
        const Tensor& weight = *in[1];
        const std::size_t w = input.extent(1);
        const std::size_t f = out.extent(0), oh = out.extent(1), ow = out.extent(2);
        const std::size_t kh = weight.extent(1), kw = weight.extent(2);
        for (std::size_t fi = 0; fi < f; ++fi) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double g = gout[(fi * oh + oy) * ow + ox];
                    if (gin[2]) (*gin[2])[fi] += g;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::size_t irow = (oy + ky) * w + ox;
                        const std::size_t wrow = (fi * kh + ky) * kw;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            if (gin[1]) (*gin[1])[wrow + kx] += g * input[irow + kx];
                            if (gin[0]) (*gin[0])[irow + kx] += g * weight[wrow + kx];
                        }
                    }
                }
            }
        }
    }
};

// out[o, p] = bias[o] + sum_i weight[o, i] * x[i, p]
struct ProjectOp final : OpBase {
    const char* name() const override { return "project"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        const Tensor& weight = *in[0];
        const Tensor& x = *in[1];
        const Tensor& bias = *in[2];
        if (weight.rank() != 2 || x.rank() != 2 || bias.rank() != 1)
            throw DimensionError("project: expected weight [O,I], x [I,P], bias [O]");
        if (weight.extent(1) != x.extent(0) || weight.extent(0) != bias.extent(0))
            throw DimensionError("project: incompatible shapes " + shape_string(weight.shape()) +
                                 " * " + shape_string(x.shape()));
        const std::size_t o = weight.extent(0), i = weight.extent(1), p = x.extent(1);
        Tensor out({o, p});
        for (std::size_t oi = 0; oi < o; ++oi) {
            for (std::size_t pi = 0; pi < p; ++pi) {
                double acc = bias[oi];
                for (std::size_t ii = 0; ii < i; ++ii) acc += weight[oi * i + ii] * x[ii * p + pi];
                out[oi * p + pi] = acc;
            }
        }
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        const Tensor& weight = *in[0];
        const Tensor& x = *in[1];
        const std::size_t o = weight.extent(0), i = weight.extent(1), p = x.extent(1);
        for (std::size_t oi = 0; oi < o; ++oi) {
            for (std::size_t pi = 0; pi < p; ++pi) {
                const double g = gout[oi * p + pi];
                if (gin[2]) (*gin[2])[oi] += g;
                for (std::size_t ii = 0; ii < i; ++ii) {
                    if (gin[0]) (*gin[0])[oi * i + ii] += g * x[ii * p + pi];
                    if (gin[1]) (*gin[1])[ii * p + pi] += g * weight[oi * i + ii];
                }
            }
        }
    }
};

struct GatherOp final : OpBase {
    std::vector<std::size_t> index_map;
    std::vector<std::size_t> out_shape;
    GatherOp(std::vector<std::size_t> m, std::vector<std::size_t> s)
        : index_map(std::move(m)), out_shape(std::move(s)) {}
    const char* name() const override { return "gather"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        if (index_map.size() != shape_product(out_shape))
            throw DimensionError("gather: index map does not match output shape");
        Tensor out(out_shape);
        for (std::size_t i = 0; i < index_map.size(); ++i) out[i] = (*in[0])[index_map[i]];
        return out;
    }
    void grad(const std::vector<const Tensor*>&, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < index_map.size(); ++i) (*gin[0])[index_map[i]] += gout[i];
    }
};

struct ConcatRowsOp final : OpBase {
    const char* name() const override { return "concat_rows"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        const std::size_t cols = in[0]->extent(1);
        std::size_t rows = 0;
        for (const Tensor* t : in) {
            if (t->rank() != 2 || t->extent(1) != cols)
                throw DimensionError("concat_rows: parts must share the column count");
            rows += t->extent(0);
        }
        Tensor out({rows, cols});
        std::size_t offset = 0;
        for (const Tensor* t : in) {
            std::copy(t->data(), t->data() + t->size(), out.data() + offset);
            offset += t->size();
        }
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
            const std::size_t n = in[k]->size();
            if (gin[k])
                for (std::size_t i = 0; i < n; ++i) (*gin[k])[i] += gout[offset + i];
            offset += n;
        }
    }
};

struct SquashRowsOp final : OpBase {
    const char* name() const override { return "squash_rows"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        const Tensor& x = *in[0];
        if (x.rank() != 2) throw DimensionError("squash_rows: expected [N,L]");
        Tensor out(x.shape());
        const std::size_t len = x.extent(1);
        for (std::size_t r = 0; r < x.extent(0); ++r)
            squash_row(x.data() + r * len, out.data() + r * len, len);
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        if (!gin[0]) return;
        const Tensor& x = *in[0];
        const std::size_t len = x.extent(1);
        for (std::size_t r = 0; r < x.extent(0); ++r)
            squash_row_grad(x.data() + r * len, gout.data() + r * len,
                            gin[0]->data() + r * len, len);
    }
};

struct SoftmaxRowsOp final : OpBase {
    const char* name() const override { return "softmax_rows"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        const Tensor& x = *in[0];
        if (x.rank() != 2) throw DimensionError("softmax_rows: expected [N,C]");
        Tensor out(x.shape());
        const std::size_t c = x.extent(1);
        for (std::size_t r = 0; r < x.extent(0); ++r)
            softmax_row(x.data() + r * c, out.data() + r * c, c);
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor& out, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        if (!gin[0]) return;
        const std::size_t c = in[0]->extent(1);
        for (std::size_t r = 0; r < in[0]->extent(0); ++r) {
            const double* y = out.data() + r * c;
            const double* g = gout.data() + r * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
            double* gx = gin[0]->data() + r * c;
            for (std::size_t j = 0; j < c; ++j) gx[j] += y[j] * (g[j] - dot);
        }
    }
};

// uhat[i, j, :] = W[group(i), j, :, :] * u[i, :]
struct CapsuleTransformOp final : OpBase {
    std::vector<std::size_t> group_of;
    std::size_t n_groups;
    CapsuleTransformOp(std::vector<std::size_t> g, std::size_t n) : group_of(std::move(g)), n_groups(n) {}
    const char* name() const override { return "capsule_transform"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        const Tensor& w = *in[0];
        const Tensor& u = *in[1];
        if (w.rank() != 4 || u.rank() != 2)
            throw DimensionError("capsule_transform: expected W [G,C,L,L], u [N,L]");
        const std::size_t n = u.extent(0), len = u.extent(1), classes = w.extent(1);
        if (w.extent(0) != n_groups || w.extent(2) != len || w.extent(3) != len ||
            group_of.size() != n)
            throw DimensionError("capsule_transform: W " + shape_string(w.shape()) +
                                 " incompatible with capsules " + shape_string(u.shape()));
        Tensor out({n, classes, len});
        for (std::size_t i = 0; i < n; ++i) {
            const double* ui = u.data() + i * len;
            for (std::size_t j = 0; j < classes; ++j) {
                const double* wm = w.data() + ((group_of[i] * classes + j) * len) * len;
                double* o = out.data() + (i * classes + j) * len;
                for (std::size_t a = 0; a < len; ++a) {
                    double acc = 0.0;
                    const double* wrow = wm + a * len;
                    for (std::size_t b = 0; b < len; ++b) acc += wrow[b] * ui[b];
                    o[a] = acc;
                }
            }
        }
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        const Tensor& w = *in[0];
        const Tensor& u = *in[1];
        const std::size_t n = u.extent(0), len = u.extent(1), classes = w.extent(1);
        for (std::size_t i = 0; i < n; ++i) {
            const double* ui = u.data() + i * len;
            for (std::size_t j = 0; j < classes; ++j) {
                const std::size_t wbase = ((group_of[i] * classes + j) * len) * len;
                const double* g = gout.data() + (i * classes + j) * len;
                for (std::size_t a = 0; a < len; ++a) {
                    const double ga = g[a];
                    if (ga == 0.0) continue;
                    for (std::size_t b = 0; b < len; ++b) {
                        if (gin[0]) (*gin[0])[wbase + a * len + b] += ga * ui[b];
                        if (gin[1]) (*gin[1])[i * len + b] += ga * w[wbase + a * len + b];
                    }
                }
            }
        }
    }
};

// s[j, :] = sum_i c[i, j] * uhat[i, j, :]
struct WeightedSumOp final : OpBase {
    const char* name() const override { return "weighted_sum"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        const Tensor& c = *in[0];
        const Tensor& uhat = *in[1];
        if (c.rank() != 2 || uhat.rank() != 3 || c.extent(0) != uhat.extent(0) ||
            c.extent(1) != uhat.extent(1))
            throw DimensionError("weighted_sum: coefficients " + shape_string(c.shape()) +
                                 " incompatible with predictions " + shape_string(uhat.shape()));
        const std::size_t n = c.extent(0), classes = c.extent(1), len = uhat.extent(2);
        Tensor out({classes, len});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < classes; ++j) {
                const double cij = c[i * classes + j];
                const double* uh = uhat.data() + (i * classes + j) * len;
                double* o = out.data() + j * len;
                for (std::size_t a = 0; a < len; ++a) o[a] += cij * uh[a];
            }
        }
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        const Tensor& c = *in[0];
        const Tensor& uhat = *in[1];
        const std::size_t n = c.extent(0), classes = c.extent(1), len = uhat.extent(2);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < classes; ++j) {
                const double* g = gout.data() + j * len;
                const double* uh = uhat.data() + (i * classes + j) * len;
                if (gin[0]) {
                    double acc = 0.0;
                    for (std::size_t a = 0; a < len; ++a) acc += g[a] * uh[a];
                    (*gin[0])[i * classes + j] += acc;
                }
                if (gin[1]) {
                    const double cij = c[i * classes + j];
                    double* gu = gin[1]->data() + (i * classes + j) * len;
                    for (std::size_t a = 0; a < len; ++a) gu[a] += cij * g[a];
                }
            }
        }
    }
};

// a[i, j] = uhat[i, j, :] . v[j, :]
struct AgreementOp final : OpBase {
    const char* name() const override { return "agreement"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        const Tensor& uhat = *in[0];
        const Tensor& v = *in[1];
        if (uhat.rank() != 3 || v.rank() != 2 || uhat.extent(1) != v.extent(0) ||
            uhat.extent(2) != v.extent(1))
            throw DimensionError("agreement: predictions " + shape_string(uhat.shape()) +
                                 " incompatible with outputs " + shape_string(v.shape()));
        const std::size_t n = uhat.extent(0), classes = v.extent(0), len = v.extent(1);
        Tensor out({n, classes});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < classes; ++j) {
                const double* uh = uhat.data() + (i * classes + j) * len;
                const double* vj = v.data() + j * len;
                double acc = 0.0;
                for (std::size_t a = 0; a < len; ++a) acc += uh[a] * vj[a];
                out[i * classes + j] = acc;
            }
        }
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        const Tensor& uhat = *in[0];
        const Tensor& v = *in[1];
        const std::size_t n = uhat.extent(0), classes = v.extent(0), len = v.extent(1);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < classes; ++j) {
                const double g = gout[i * classes + j];
                if (g == 0.0) continue;
                const double* uh = uhat.data() + (i * classes + j) * len;
                const double* vj = v.data() + j * len;
                for (std::size_t a = 0; a < len; ++a) {
                    if (gin[0]) (*gin[0])[(i * classes + j) * len + a] += g * vj[a];
                    if (gin[1]) (*gin[1])[j * len + a] += g * uh[a];
                }
            }
        }
    }
};

struct RowNormsOp final : OpBase {
    const char* name() const override { return "row_norms"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        const Tensor& x = *in[0];
        if (x.rank() != 2) throw DimensionError("row_norms: expected [N,L]");
        const std::size_t n = x.extent(0), len = x.extent(1);
        Tensor out({n});
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            const double* r = x.data() + i * len;
            for (std::size_t a = 0; a < len; ++a) acc += r[a] * r[a];
            out[i] = std::sqrt(acc);
        }
        return out;
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor& out, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        if (!gin[0]) return;
        const Tensor& x = *in[0];
        const std::size_t n = x.extent(0), len = x.extent(1);
        for (std::size_t i = 0; i < n; ++i) {
            if (out[i] <= 0.0) continue;
            const double scale = gout[i] / out[i];
            const double* r = x.data() + i * len;
            double* g = gin[0]->data() + i * len;
            for (std::size_t a = 0; a < len; ++a) g[a] += scale * r[a];
        }
    }
};

struct MarginLossOp final : OpBase {
    std::size_t target;
    double m_plus, m_minus, lambda;
    bool squared;
    MarginLossOp(std::size_t t, double mp, double mm, double lam, bool sq)
        : target(t), m_plus(mp), m_minus(mm), lambda(lam), squared(sq) {}
    const char* name() const override { return "margin_loss"; }
    Tensor eval(const std::vector<const Tensor*>& in) const override {
        const Tensor& lengths = *in[0];
        if (lengths.rank() != 1) throw DimensionError("margin_loss: expected a length vector");
        if (target >= lengths.size()) throw ContractError("margin_loss: target class out of range");
        double loss = 0.0;
        for (std::size_t j = 0; j < lengths.size(); ++j) {
            const double l = lengths[j];
            if (l >= 1.0)
                throw ContractError("margin_loss: capsule length " + std::to_string(l) +
                                    " >= 1 (squash bound broken upstream)");
            const double hinge = (j == target) ? std::max(0.0, m_plus - l)
                                               : std::max(0.0, l - m_minus);
            const double term = squared ? hinge * hinge : hinge;
            loss += (j == target) ? term : lambda * term;
        }
        return Tensor::scalar(loss);
    }
    void grad(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& gout,
              const std::vector<Tensor*>& gin) const override {
        if (!gin[0]) return;
        const Tensor& lengths = *in[0];
        for (std::size_t j = 0; j < lengths.size(); ++j) {
            const double l = lengths[j];
            double d;
            if (j == target) {
                const double hinge = std::max(0.0, m_plus - l);
                d = squared ? -2.0 * hinge : (hinge > 0.0 ? -1.0 : 0.0);
            } else {
                const double hinge = std::max(0.0, l - m_minus);
                d = lambda * (squared ? 2.0 * hinge : (hinge > 0.0 ? 1.0 : 0.0));
            }
            (*gin[0])[j] += gout[0] * d;
        }
    }
};

} // namespace

Value Tape::push(std::shared_ptr<const OpBase> op, std::vector<std::size_t> inputs) {
    std::vector<const Tensor*> in;
    in.reserve(inputs.size());
    for (std::size_t i : inputs) in.push_back(&nodes_[i].value);
    Tensor out = op->eval(in);
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(out), {}});
    return Value{nodes_.size() - 1};
}

Value Tape::constant(Tensor t) {
    nodes_.push_back(Node{nullptr, {}, std::move(t), {}});
    return Value{nodes_.size() - 1};
}

Value Tape::param(const std::string& name, Tensor t) {
    if (name.empty()) throw ContractError("parameter name must be non-empty");
    if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
    nodes_.push_back(Node{nullptr, {}, std::move(t), name});
    params_[name] = nodes_.size() - 1;
    return Value{nodes_.size() - 1};
}

const Tensor& Tape::value(Value v) const {
    if (!v.valid() || v.index >= nodes_.size()) throw ContractError("invalid tape value handle");
    return nodes_[v.index].value;
}

std::vector<std::string> Tape::param_names() const {
    std::vector<std::string> names;
    names.reserve(params_.size());
    for (const auto& [name, _] : params_) names.push_back(name);
    return names;
}

Value Tape::add(Value a, Value b) { return push(std::make_shared<AddOp>(), {a.index, b.index}); }
Value Tape::scale(Value a, double c) { return push(std::make_shared<ScaleOp>(c), {a.index}); }
Value Tape::mul(Value a, Value b) { return push(std::make_shared<MulOp>(), {a.index, b.index}); }
Value Tape::sum(Value a) { return push(std::make_shared<SumOp>(), {a.index}); }

Value Tape::mean_scalars(std::span<const Value> scalars) {
    if (scalars.empty()) throw ContractError("mean_scalars: empty input");
    std::vector<std::size_t> in;
    for (Value v : scalars) {
        if (!value(v).is_scalar()) throw ContractError("mean_scalars: non-scalar input");
        in.push_back(v.index);
    }
    return push(std::make_shared<MeanScalarsOp>(), std::move(in));
}

Value Tape::relu(Value a) { return push(std::make_shared<ReluOp>(), {a.index}); }

Value Tape::apply_mask(Value a, Tensor mask) {
    return push(std::make_shared<ApplyMaskOp>(std::move(mask)), {a.index});
}

Value Tape::conv2d_valid(Value input, Value weight, Value bias) {
    return push(std::make_shared<Conv2dOp>(), {input.index, weight.index, bias.index});
}

Value Tape::project(Value weight, Value x, Value bias) {
    return push(std::make_shared<ProjectOp>(), {weight.index, x.index, bias.index});
}

Value Tape::gather(Value x, std::vector<std::size_t> index_map, std::vector<std::size_t> out_shape) {
    for (std::size_t i : index_map)
        if (i >= value(x).size()) throw DimensionError("gather: index out of range");
    return push(std::make_shared<GatherOp>(std::move(index_map), std::move(out_shape)), {x.index});
}

Value Tape::concat_rows(std::span<const Value> parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty input");
    std::vector<std::size_t> in;
    for (Value v : parts) in.push_back(v.index);
    return push(std::make_shared<ConcatRowsOp>(), std::move(in));
}

Value Tape::squash_rows(Value x) { return push(std::make_shared<SquashRowsOp>(), {x.index}); }
Value Tape::softmax_rows(Value x) { return push(std::make_shared<SoftmaxRowsOp>(), {x.index}); }

Value Tape::capsule_transform(Value weights, Value capsules,
                              std::vector<std::size_t> group_of_capsule, std::size_t n_groups) {
    for (std::size_t g : group_of_capsule)
        if (g >= n_groups) throw DimensionError("capsule_transform: group index out of range");
    return push(std::make_shared<CapsuleTransformOp>(std::move(group_of_capsule), n_groups),
                {weights.index, capsules.index});
}

Value Tape::weighted_sum(Value coefficients, Value predictions) {
    return push(std::make_shared<WeightedSumOp>(), {coefficients.index, predictions.index});
}

Value Tape::agreement(Value predictions, Value outputs) {
    return push(std::make_shared<AgreementOp>(), {predictions.index, outputs.index});
}

Value Tape::row_norms(Value x) { return push(std::make_shared<RowNormsOp>(), {x.index}); }

Value Tape::margin_loss(Value lengths, std::size_t target, double m_plus, double m_minus,
                        double lambda, bool squared) {
    return push(std::make_shared<MarginLossOp>(target, m_plus, m_minus, lambda, squared),
                {lengths.index});
}

Tensor Tape::replay(Value v) const {
    if (!v.valid() || v.index >= nodes_.size()) throw ContractError("invalid tape value handle");
    std::vector<Tensor> recomputed(v.index + 1);
    for (std::size_t i = 0; i <= v.index; ++i) {
        const Node& node = nodes_[i];
        if (!node.op) {
            recomputed[i] = node.value;
            continue;
        }
        std::vector<const Tensor*> in;
        in.reserve(node.inputs.size());
        for (std::size_t j : node.inputs) in.push_back(&recomputed[j]);
        recomputed[i] = node.op->eval(in);
    }
    return recomputed[v.index];
}

GradientMap Tape::backward(Value out, double adjoint) {
    const Tensor& terminal = value(out);
    if (!terminal.is_scalar())
        throw ContractError("backward requires a scalar terminal, got shape " +
                            shape_string(terminal.shape()));

    std::vector<Tensor> grads(nodes_.size());
    auto slot = [&](std::size_t i) -> Tensor& {
        if (grads[i].size() == 0) grads[i] = Tensor(nodes_[i].value.shape());
        return grads[i];
    };
    slot(out.index)[0] = adjoint;

    for (std::size_t i = out.index + 1; i-- > 0;) {
        const Node& node = nodes_[i];
        if (!node.op || grads[i].size() == 0) continue;
        std::vector<const Tensor*> in;
        std::vector<Tensor*> gin;
        in.reserve(node.inputs.size());
        gin.reserve(node.inputs.size());
        for (std::size_t j : node.inputs) {
            in.push_back(&nodes_[j].value);
            gin.push_back(&slot(j));
        }
        node.op->grad(in, node.value, grads[i], gin);
    }

    GradientMap result;
    for (const auto& [name, idx] : params_) {
        result[name] = grads[idx].size() != 0 ? std::move(grads[idx])
                                              : Tensor(nodes_[idx].value.shape());
    }
    return result;
}

Tensor conv_columns(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    if (input.rank() != 2) throw DimensionError("conv_columns: input must be a matrix");
    if (kernels.rank() != 3) throw DimensionError("conv_columns: kernels must be [F,H,k]");
    if (kernels.extent(1) != input.extent(0))
        throw DimensionError("conv_columns: kernel height " + std::to_string(kernels.extent(1)) +
                             " must equal input height " + std::to_string(input.extent(0)));
    if (kernels.extent(2) > input.extent(1))
        throw DimensionError("conv_columns: kernel width " + std::to_string(kernels.extent(2)) +
                             " exceeds input width " + std::to_string(input.extent(1)));
    if (bias.rank() != 1 || bias.extent(0) != kernels.extent(0))
        throw DimensionError("conv_columns: need one bias per filter");
    Tensor out({kernels.extent(0), 1, input.extent(1) - kernels.extent(2) + 1});
    conv2d_valid_impl(input, kernels, bias, out);
    return Tensor({kernels.extent(0), input.extent(1) - kernels.extent(2) + 1},
                  std::vector<double>(out.data(), out.data() + out.size()));
}

std::vector<double> squash(std::span<const double> s) {
    std::vector<double> v(s.size());
    squash_row(s.data(), v.data(), s.size());
    return v;
}

} // namespace mkcaps::ad
