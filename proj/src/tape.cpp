#include "casnet/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

namespace casnet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using Buffer = std::shared_ptr<std::vector<double>>;
using ConstBuffer = std::shared_ptr<const std::vector<double>>;

Buffer make_buffer(std::int64_t n, double fill = 0.0) {
    return std::make_shared<std::vector<double>>(static_cast<std::size_t>(n), fill);
}

void check_finite(const char* op, const std::vector<double>& v) {
    // One accumulation pass: any NaN or Inf poisons the sums. The rescan
    // separates real non-finite entries from benign accumulator overflow.
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= v.size(); i += 4) {
        a0 += v[i];
        a1 += v[i + 1];
        a2 += v[i + 2];
        a3 += v[i + 3];
    }
    for (; i < v.size(); ++i) a0 += v[i];
    if (std::isfinite(a0 + a1 + a2 + a3)) return;
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("op '") + op + "' produced a non-finite value");
        }
    }
}

// Keeps the documented open-interval range (0,1) even where exp underflows,
// e.g. 1/(1+exp(-700)) would otherwise round to exactly 1.
double stable_sigmoid(double x) {
    double v;
    if (x >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        v = e / (1.0 + e);
    }
    if (v >= 1.0) return std::nextafter(1.0, 0.0);
    if (v <= 0.0) return std::numeric_limits<double>::denorm_min();
    return v;
}

// Zero-padded im2col. Rows are (n, ho, wo), columns are (kh, kw, ci), both
// row-major, which makes the conv forward a single row-major GEMM against the
// kernel viewed as a (kh*kw*Cin) x Cout matrix. Writes every entry (padding
// cells included), so the destination may be handed over uninitialized.
void im2col(const std::vector<double>& x, Shape xs, int kh, int kw, int stride, int pad,
            int ho, int wo, double* col) {
    const int cin = xs.c;
    const std::int64_t row_len = static_cast<std::int64_t>(kh) * kw * cin;
    std::int64_t row = 0;
    for (int n = 0; n < xs.n; ++n) {
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow, ++row) {
                double* dst = col + row * row_len;
                for (int fh = 0; fh < kh; ++fh) {
                    const int ih = oh * stride - pad + fh;
                    double* drow = dst + static_cast<std::int64_t>(fh) * kw * cin;
                    if (ih < 0 || ih >= xs.h) {
                        std::fill(drow, drow + static_cast<std::int64_t>(kw) * cin, 0.0);
                        continue;
                    }
                    for (int fw = 0; fw < kw; ++fw) {
                        const int iw = ow * stride - pad + fw;
                        double* d = drow + static_cast<std::int64_t>(fw) * cin;
                        if (iw < 0 || iw >= xs.w) {
                            std::fill(d, d + cin, 0.0);
                            continue;
                        }
                        const double* src =
                            x.data() + ((static_cast<std::int64_t>(n) * xs.h + ih) * xs.w + iw) * cin;
                        std::copy(src, src + cin, d);
                    }
                }
            }
        }
    }
}

// Scatter-add of a column matrix back onto the input layout.
void col2im_add(const double* col, Shape xs, int kh, int kw, int stride, int pad,
                int ho, int wo, std::vector<double>& dx) {
    const int cin = xs.c;
    const std::int64_t row_len = static_cast<std::int64_t>(kh) * kw * cin;
    std::int64_t row = 0;
    for (int n = 0; n < xs.n; ++n) {
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow, ++row) {
                const double* src = col + row * row_len;
                for (int fh = 0; fh < kh; ++fh) {
                    const int ih = oh * stride - pad + fh;
                    if (ih < 0 || ih >= xs.h) continue;
                    for (int fw = 0; fw < kw; ++fw) {
                        const int iw = ow * stride - pad + fw;
                        if (iw < 0 || iw >= xs.w) continue;
                        double* dst =
                            dx.data() + ((static_cast<std::int64_t>(n) * xs.h + ih) * xs.w + iw) * cin;
                        const double* s = src + (static_cast<std::int64_t>(fh) * kw + fw) * cin;
                        for (int ci = 0; ci < cin; ++ci) dst[ci] += s[ci];
                    }
                }
            }
        }
    }
}

// Effective per-dimension index factors for H/W/C broadcasting; a broadcast
// dimension gets factor 0 so the same element is read for every position.
struct BcastIndex {
    std::int64_t sn, sh, sw, sc;

    static BcastIndex of(const Shape& s, const Shape& out) {
        BcastIndex b{};
        b.sc = (s.c == out.c) ? 1 : 0;
        b.sw = (s.w == out.w) ? static_cast<std::int64_t>(s.c) : 0;
        b.sh = (s.h == out.h) ? static_cast<std::int64_t>(s.w) * s.c : 0;
        b.sn = static_cast<std::int64_t>(s.h) * s.w * s.c;
        return b;
    }
    std::int64_t at(int n, int h, int w, int c) const {
        return n * sn + h * sh + w * sw + c * sc;
    }
    std::int64_t base(int n, int h, int w) const { return n * sn + h * sh + w * sw; }
};

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    if (a.n != b.n) {
        throw ShapeError(std::string(op) + ": batch sizes differ (" + a.str() + " vs " + b.str() + ")");
    }
    auto merge = [&](int x, int y) {
        if (x == y) return x;
        if (x == 1) return y;
        if (y == 1) return x;
        throw ShapeError(std::string(op) + ": shapes " + a.str() + " and " + b.str() +
                         " are not broadcastable");
    };
    return Shape{a.n, merge(a.h, b.h), merge(a.w, b.w), merge(a.c, b.c)};
}

}  // namespace

std::shared_ptr<GradNode> Tape::new_node(const char* op, Shape s) {
    auto n = std::make_shared<GradNode>();
    n->shape = s;
    n->op = op;
    nodes_.push_back(n);
    return n;
}

Tensor Tape::use(Param& p) {
    Tensor t(p.value.shape(), std::vector<double>(p.value.data()));
    if (track_) {
        auto node = new_node("param", t.shape());
        GradNode* self = node.get();
        Param* pp = &p;
        node->backprop = [self, pp] {
            auto& g = pp->grad.raw();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
        };
        t.set_node(node);
    }
    return t;
}

Tensor Tape::gap(const Tensor& x) {
    const Shape xs = x.shape();
    if (xs.h * xs.w == 0) {
        throw ShapeError("gap: zero-area input " + xs.str());
    }
    const Shape os{xs.n, 1, 1, xs.c};
    auto out = make_buffer(os.numel());
    const auto& xd = x.data();
    const double inv = 1.0 / (static_cast<double>(xs.h) * xs.w);
    for (int n = 0; n < xs.n; ++n) {
        double* o = out->data() + static_cast<std::int64_t>(n) * xs.c;
        const double* base = xd.data() + static_cast<std::int64_t>(n) * xs.h * xs.w * xs.c;
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(xs.h) * xs.w; ++p) {
            const double* row = base + p * xs.c;
            for (int c = 0; c < xs.c; ++c) o[c] += row[c];
        }
        for (int c = 0; c < xs.c; ++c) o[c] *= inv;
    }
    check_finite("gap", *out);

    Tensor r(os, std::move(*out));
    if (track_ && x.node()) {
        auto node = new_node("gap", os);
        GradNode* self = node.get();
        auto xn = x.node();
        node->backprop = [self, xn, xs, inv] {
            auto& dx = xn->ensure_grad();
            for (int n = 0; n < xs.n; ++n) {
                const double* og = self->grad.data() + static_cast<std::int64_t>(n) * xs.c;
                double* base = dx.data() + static_cast<std::int64_t>(n) * xs.h * xs.w * xs.c;
                for (std::int64_t p = 0; p < static_cast<std::int64_t>(xs.h) * xs.w; ++p) {
                    double* row = base + p * xs.c;
                    for (int c = 0; c < xs.c; ++c) row[c] += og[c] * inv;
                }
            }
        };
        r.set_node(node);
    }
    return r;
}

Tensor Tape::linear(const Tensor& x, Param& w, Param& b) {
    const Shape xs = x.shape();
    const Shape ws = w.value.shape();
    const Shape bs = b.value.shape();
    if (xs.h != 1 || xs.w != 1) {
        throw ShapeError("linear: input must be (N,1,1,C), got " + xs.str());
    }
    if (ws.n != 1 || ws.h != 1 || ws.c != xs.c) {
        throw ShapeError("linear: weight " + ws.str() + " does not match input channels " +
                         std::to_string(xs.c));
    }
    const int cout = ws.w;
    const int cin = ws.c;
    if (!(bs == Shape{1, 1, 1, cout})) {
        throw ShapeError("linear: bias " + bs.str() + " does not match out channels " +
                         std::to_string(cout));
    }

    const Shape os{xs.n, 1, 1, cout};
    auto out = make_buffer(os.numel());
    const auto& xd = x.data();
    const auto& wd = w.value.data();
    const auto& bd = b.value.data();
    for (int n = 0; n < xs.n; ++n) {
        const double* xv = xd.data() + static_cast<std::int64_t>(n) * cin;
        double* o = out->data() + static_cast<std::int64_t>(n) * cout;
        for (int co = 0; co < cout; ++co) {
            const double* row = wd.data() + static_cast<std::int64_t>(co) * cin;
            double acc = bd[co];
            for (int ci = 0; ci < cin; ++ci) acc += row[ci] * xv[ci];
            o[co] = acc;
        }
    }
    check_finite("linear", *out);

    Tensor r(os, std::move(*out));
    if (track_) {
        auto node = new_node("linear", os);
        GradNode* self = node.get();
        auto xn = x.node();
        auto xbuf = x.buffer();
        Param* wp = &w;
        Param* bp = &b;
        const int N = xs.n;
        node->backprop = [self, xn, xbuf, wp, bp, N, cin, cout] {
            const auto& og = self->grad;
            const auto& xd = *xbuf;
            const auto& wd = wp->value.data();
            auto& dw = wp->grad.raw();
            auto& db = bp->grad.raw();
            for (int n = 0; n < N; ++n) {
                const double* g = og.data() + static_cast<std::int64_t>(n) * cout;
                const double* xv = xd.data() + static_cast<std::int64_t>(n) * cin;
                for (int co = 0; co < cout; ++co) {
                    db[co] += g[co];
                    double* dwrow = dw.data() + static_cast<std::int64_t>(co) * cin;
                    for (int ci = 0; ci < cin; ++ci) dwrow[ci] += g[co] * xv[ci];
                }
            }
            if (xn) {
                auto& dx = xn->ensure_grad();
                for (int n = 0; n < N; ++n) {
                    const double* g = og.data() + static_cast<std::int64_t>(n) * cout;
                    double* dxv = dx.data() + static_cast<std::int64_t>(n) * cin;
                    for (int co = 0; co < cout; ++co) {
                        const double* row = wd.data() + static_cast<std::int64_t>(co) * cin;
                        for (int ci = 0; ci < cin; ++ci) dxv[ci] += g[co] * row[ci];
                    }
                }
            }
        };
        r.set_node(node);
    }
    return r;
}

Tensor Tape::relu(const Tensor& x) {
    auto out = make_buffer(x.numel());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) (*out)[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    check_finite("relu", *out);
    if (track_ && margins_) {
        for (double v : xd) note_margin(std::fabs(v));
    }

    Tensor r(x.shape(), std::move(*out));
    if (track_ && x.node()) {
        auto node = new_node("relu", x.shape());
        GradNode* self = node.get();
        auto xn = x.node();
        auto xbuf = x.buffer();
        node->backprop = [self, xn, xbuf] {
            auto& dx = xn->ensure_grad();
            const auto& xd = *xbuf;
            for (std::size_t i = 0; i < dx.size(); ++i) {
                if (xd[i] > 0.0) dx[i] += self->grad[i];
            }
        };
        r.set_node(node);
    }
    return r;
}

Tensor Tape::sigmoid(const Tensor& x) {
    auto out = make_buffer(x.numel());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) (*out)[i] = stable_sigmoid(xd[i]);
    check_finite("sigmoid", *out);

    Tensor r(x.shape(), std::move(*out));
    if (track_ && x.node()) {
        auto node = new_node("sigmoid", x.shape());
        GradNode* self = node.get();
        auto xn = x.node();
        auto sbuf = r.buffer();
        node->backprop = [self, xn, sbuf] {
            auto& dx = xn->ensure_grad();
            const auto& s = *sbuf;
            for (std::size_t i = 0; i < dx.size(); ++i) {
                dx[i] += self->grad[i] * s[i] * (1.0 - s[i]);
            }
        };
        r.set_node(node);
    }
    return r;
}

Tensor Tape::conv2d(const Tensor& x, Param& k, Param& b, int stride, int padding) {
    const Shape xs = x.shape();
    const Shape ks = k.value.shape();  // (kh, kw, Cin, Cout)
    const int kh = ks.n, kw = ks.h, cin = ks.w, cout = ks.c;
    if (kh % 2 == 0 || kw % 2 == 0) {
        throw ShapeError("conv2d: kernel dims must be odd, got " + ks.str());
    }
    if (cin != xs.c) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(cin) + " channels, input has " +
                         std::to_string(xs.c));
    }
    if (!(b.value.shape() == Shape{1, 1, 1, cout})) {
        throw ShapeError("conv2d: bias " + b.value.shape().str() + " does not match out channels " +
                         std::to_string(cout));
    }
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    const int pad = padding < 0 ? (kh - 1) / 2 : padding;
    if (xs.h + 2 * pad < kh || xs.w + 2 * pad < kw) {
        throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input " + xs.str());
    }
    const int ho = (xs.h + 2 * pad - kh) / stride + 1;
    const int wo = (xs.w + 2 * pad - kw) / stride + 1;
    const Shape os{xs.n, ho, wo, cout};

    const std::int64_t rows = static_cast<std::int64_t>(xs.n) * ho * wo;
    const std::int64_t kdim = static_cast<std::int64_t>(kh) * kw * cin;

    // A 1x1 stride-1 unpadded kernel needs no column matrix: the input
    // already has one kdim-row per output position.
    const bool direct = kh == 1 && kw == 1 && stride == 1 && pad == 0;

    RowMat col;
    if (!direct) {
        col.resize(rows, kdim);
        im2col(x.data(), xs, kh, kw, stride, pad, ho, wo, col.data());
    }

    auto out = make_buffer(os.numel());
    {
        ConstMapMat colM(direct ? x.data().data() : col.data(), rows, kdim);
        ConstMapMat kM(k.value.data().data(), kdim, cout);
        MapMat outM(out->data(), rows, cout);
        outM.noalias() = colM * kM;
        ConstMapMat bM(b.value.data().data(), 1, cout);
        outM.rowwise() += bM.row(0);
    }
    check_finite("conv2d", *out);

    Tensor r(os, std::move(*out));
    if (track_) {
        auto node = new_node("conv2d", os);
        GradNode* self = node.get();
        auto xn = x.node();
        auto xbuf = x.buffer();
        Param* kp = &k;
        Param* bp = &b;
        // the column matrix is rebuilt on the backward pass to keep tapes small
        node->backprop = [self, xn, xbuf, kp, bp, xs, kh, kw, stride, pad, ho, wo, rows, kdim,
                          cout, direct] {
            const auto& og = self->grad;
            ConstMapMat ogM(og.data(), rows, cout);

            RowMat col;
            if (!direct) {
                col.resize(rows, kdim);
                im2col(*xbuf, xs, kh, kw, stride, pad, ho, wo, col.data());
            }
            ConstMapMat colM(direct ? xbuf->data() : col.data(), rows, kdim);

            MapMat dkM(kp->grad.raw().data(), kdim, cout);
            dkM.noalias() += colM.transpose() * ogM;

            MapMat dbM(bp->grad.raw().data(), 1, cout);
            dbM.row(0) += ogM.colwise().sum();

            if (xn) {
                auto& dx = xn->ensure_grad();
                ConstMapMat kM(kp->value.data().data(), kdim, cout);
                if (direct) {
                    MapMat dxM(dx.data(), rows, kdim);
                    dxM.noalias() += ogM * kM.transpose();
                } else {
                    RowMat dcol(rows, kdim);
                    dcol.noalias() = ogM * kM.transpose();
                    col2im_add(dcol.data(), xs, kh, kw, stride, pad, ho, wo, dx);
                }
            }
        };
        r.set_node(node);
    }
    return r;
}

Tensor Tape::concat_channels(const Tensor& a, const Tensor& b) {
    const Shape as = a.shape(), bs = b.shape();
    if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
        throw ShapeError("concat_channels: shapes " + as.str() + " and " + bs.str() +
                         " differ outside the channel axis");
    }
    const Shape os{as.n, as.h, as.w, as.c + bs.c};
    auto out = make_buffer(os.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    const std::int64_t positions = static_cast<std::int64_t>(as.n) * as.h * as.w;
    for (std::int64_t p = 0; p < positions; ++p) {
        double* o = out->data() + p * os.c;
        std::copy(ad.data() + p * as.c, ad.data() + (p + 1) * as.c, o);
        std::copy(bd.data() + p * bs.c, bd.data() + (p + 1) * bs.c, o + as.c);
    }

    Tensor r(os, std::move(*out));
    if (track_ && (a.node() || b.node())) {
        auto node = new_node("concat_channels", os);
        GradNode* self = node.get();
        auto an = a.node();
        auto bn = b.node();
        const int ca = as.c, cb = bs.c;
        node->backprop = [self, an, bn, positions, ca, cb] {
            const auto& og = self->grad;
            const int co = ca + cb;
            if (an) {
                auto& da = an->ensure_grad();
                for (std::int64_t p = 0; p < positions; ++p) {
                    const double* g = og.data() + p * co;
                    double* d = da.data() + p * ca;
                    for (int c = 0; c < ca; ++c) d[c] += g[c];
                }
            }
            if (bn) {
                auto& db = bn->ensure_grad();
                for (std::int64_t p = 0; p < positions; ++p) {
                    const double* g = og.data() + p * co + ca;
                    double* d = db.data() + p * cb;
                    for (int c = 0; c < cb; ++c) d[c] += g[c];
                }
            }
        };
        r.set_node(node);
    }
    return r;
}

Tensor Tape::slice_channels(const Tensor& x, int c0, int c1) {
    const Shape xs = x.shape();
    if (c0 < 0 || c1 > xs.c || c0 >= c1) {
        throw ShapeError("slice_channels: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") invalid for " + xs.str());
    }
    const Shape os{xs.n, xs.h, xs.w, c1 - c0};
    auto out = make_buffer(os.numel());
    const auto& xd = x.data();
    const std::int64_t positions = static_cast<std::int64_t>(xs.n) * xs.h * xs.w;
    for (std::int64_t p = 0; p < positions; ++p) {
        std::copy(xd.data() + p * xs.c + c0, xd.data() + p * xs.c + c1, out->data() + p * os.c);
    }

    Tensor r(os, std::move(*out));
    if (track_ && x.node()) {
        auto node = new_node("slice_channels", os);
        GradNode* self = node.get();
        auto xn = x.node();
        const int cx = xs.c, co = os.c;
        node->backprop = [self, xn, positions, cx, co, c0] {
            auto& dx = xn->ensure_grad();
            const auto& og = self->grad;
            for (std::int64_t p = 0; p < positions; ++p) {
                const double* g = og.data() + p * co;
                double* d = dx.data() + p * cx + c0;
                for (int c = 0; c < co; ++c) d[c] += g[c];
            }
        };
        r.set_node(node);
    }
    return r;
}

std::pair<Tensor, Tensor> Tape::channel_stats(const Tensor& x) {
    const Shape xs = x.shape();
    if (xs.c < 1) throw ShapeError("channel_stats: need at least one channel, got " + xs.str());
    const Shape os{xs.n, xs.h, xs.w, 1};
    auto avg = make_buffer(os.numel());
    auto mx = make_buffer(os.numel());
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(os.numel()));
    const auto& xd = x.data();
    const std::int64_t positions = static_cast<std::int64_t>(xs.n) * xs.h * xs.w;
    const double inv = 1.0 / xs.c;
    for (std::int64_t p = 0; p < positions; ++p) {
        const double* row = xd.data() + p * xs.c;
        double sum = row[0];
        double best = row[0];
        double second = -std::numeric_limits<double>::infinity();
        int bi = 0;
        for (int c = 1; c < xs.c; ++c) {
            sum += row[c];
            if (row[c] > best) {
                second = best;
                best = row[c];
                bi = c;
            } else if (row[c] > second) {
                second = row[c];
            }
        }
        (*avg)[p] = sum * inv;
        (*mx)[p] = best;
        (*argmax)[p] = bi;
        if (track_ && margins_ && xs.c > 1) note_margin(best - second);
    }
    check_finite("channel_stats", *avg);

    Tensor ravg(os, std::move(*avg));
    Tensor rmax(os, std::move(*mx));
    if (track_ && x.node()) {
        auto xn = x.node();
        const int cx = xs.c;
        {
            auto node = new_node("channel_avg", os);
            GradNode* self = node.get();
            node->backprop = [self, xn, positions, cx, inv] {
                auto& dx = xn->ensure_grad();
                const auto& og = self->grad;
                for (std::int64_t p = 0; p < positions; ++p) {
                    double* d = dx.data() + p * cx;
                    const double g = og[p] * inv;
                    for (int c = 0; c < cx; ++c) d[c] += g;
                }
            };
            ravg.set_node(node);
        }
        {
            auto node = new_node("channel_max", os);
            GradNode* self = node.get();
            node->backprop = [self, xn, positions, cx, argmax] {
                auto& dx = xn->ensure_grad();
                const auto& og = self->grad;
                for (std::int64_t p = 0; p < positions; ++p) {
                    dx[p * cx + (*argmax)[p]] += og[p];
                }
            };
            rmax.set_node(node);
        }
    }
    return {std::move(ravg), std::move(rmax)};
}

Tensor Tape::broadcast_mul(const Tensor& a, const Tensor& b) {
    const Shape os = broadcast_shape("broadcast_mul", a.shape(), b.shape());
    auto out = make_buffer(os.numel());
    const auto ia = BcastIndex::of(a.shape(), os);
    const auto ib = BcastIndex::of(b.shape(), os);
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::int64_t o = 0;
    for (int n = 0; n < os.n; ++n)
        for (int h = 0; h < os.h; ++h)
            for (int w = 0; w < os.w; ++w) {
                const double* pa = ad.data() + ia.base(n, h, w);
                const double* pb = bd.data() + ib.base(n, h, w);
                if (ia.sc && ib.sc) {
                    for (int c = 0; c < os.c; ++c, ++o) (*out)[o] = pa[c] * pb[c];
                } else if (ia.sc) {
                    for (int c = 0; c < os.c; ++c, ++o) (*out)[o] = pa[c] * pb[0];
                } else {
                    for (int c = 0; c < os.c; ++c, ++o) (*out)[o] = pa[0] * pb[c * ib.sc];
                }
            }
    check_finite("broadcast_mul", *out);

    Tensor r(os, std::move(*out));
    if (track_ && (a.node() || b.node())) {
        auto node = new_node("broadcast_mul", os);
        GradNode* self = node.get();
        auto an = a.node();
        auto bn = b.node();
        auto abuf = a.buffer();
        auto bbuf = b.buffer();
        node->backprop = [self, an, bn, abuf, bbuf, ia, ib, os] {
            const auto& og = self->grad;
            const auto& ad = *abuf;
            const auto& bd = *bbuf;
            std::vector<double>* da = an ? &an->ensure_grad() : nullptr;
            std::vector<double>* db = bn ? &bn->ensure_grad() : nullptr;
            std::int64_t o = 0;
            for (int n = 0; n < os.n; ++n)
                for (int h = 0; h < os.h; ++h)
                    for (int w = 0; w < os.w; ++w) {
                        const std::int64_t ba = ia.base(n, h, w);
                        const std::int64_t bb = ib.base(n, h, w);
                        for (int c = 0; c < os.c; ++c, ++o) {
                            const std::int64_t sa = ba + c * ia.sc;
                            const std::int64_t sb = bb + c * ib.sc;
                            if (da) (*da)[sa] += og[o] * bd[sb];
                            if (db) (*db)[sb] += og[o] * ad[sa];
                        }
                    }
        };
        r.set_node(node);
    }
    return r;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    const Shape os = broadcast_shape("add", a.shape(), b.shape());
    auto out = make_buffer(os.numel());
    const auto ia = BcastIndex::of(a.shape(), os);
    const auto ib = BcastIndex::of(b.shape(), os);
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::int64_t o = 0;
    for (int n = 0; n < os.n; ++n)
        for (int h = 0; h < os.h; ++h)
            for (int w = 0; w < os.w; ++w) {
                const double* pa = ad.data() + ia.base(n, h, w);
                const double* pb = bd.data() + ib.base(n, h, w);
                if (ia.sc && ib.sc) {
                    for (int c = 0; c < os.c; ++c, ++o) (*out)[o] = pa[c] + pb[c];
                } else {
                    for (int c = 0; c < os.c; ++c, ++o)
                        (*out)[o] = pa[c * ia.sc] + pb[c * ib.sc];
                }
            }
    check_finite("add", *out);

    Tensor r(os, std::move(*out));
    if (track_ && (a.node() || b.node())) {
        auto node = new_node("add", os);
        GradNode* self = node.get();
        auto an = a.node();
        auto bn = b.node();
        node->backprop = [self, an, bn, ia, ib, os] {
            const auto& og = self->grad;
            std::vector<double>* da = an ? &an->ensure_grad() : nullptr;
            std::vector<double>* db = bn ? &bn->ensure_grad() : nullptr;
            std::int64_t o = 0;
            for (int n = 0; n < os.n; ++n)
                for (int h = 0; h < os.h; ++h)
                    for (int w = 0; w < os.w; ++w) {
                        const std::int64_t ba = ia.base(n, h, w);
                        const std::int64_t bb = ib.base(n, h, w);
                        for (int c = 0; c < os.c; ++c, ++o) {
                            if (da) (*da)[ba + c * ia.sc] += og[o];
                            if (db) (*db)[bb + c * ib.sc] += og[o];
                        }
                    }
        };
        r.set_node(node);
    }
    return r;
}

Tensor Tape::repeat_batch(const Tensor& x, int n) {
    const Shape xs = x.shape();
    if (xs.n != 1) throw ShapeError("repeat_batch: input batch must be 1, got " + xs.str());
    if (n < 1) throw ShapeError("repeat_batch: count must be >= 1");
    const Shape os{n, xs.h, xs.w, xs.c};
    auto out = make_buffer(os.numel());
    const auto& xd = x.data();
    const std::int64_t item = xs.numel();
    for (int i = 0; i < n; ++i) {
        std::copy(xd.begin(), xd.end(), out->begin() + static_cast<std::int64_t>(i) * item);
    }

    Tensor r(os, std::move(*out));
    if (track_ && x.node()) {
        auto node = new_node("repeat_batch", os);
        GradNode* self = node.get();
        auto xn = x.node();
        node->backprop = [self, xn, n, item] {
            auto& dx = xn->ensure_grad();
            const auto& og = self->grad;
            for (int i = 0; i < n; ++i) {
                const double* g = og.data() + static_cast<std::int64_t>(i) * item;
                for (std::int64_t j = 0; j < item; ++j) dx[j] += g[j];
            }
        };
        r.set_node(node);
    }
    return r;
}

Tensor Tape::sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    if (!std::isfinite(s)) throw NumericError("op 'sum_all' produced a non-finite value");

    Tensor r(Shape{1, 1, 1, 1}, std::vector<double>{s});
    if (track_ && x.node()) {
        auto node = new_node("sum_all", r.shape());
        GradNode* self = node.get();
        auto xn = x.node();
        node->backprop = [self, xn] {
            auto& dx = xn->ensure_grad();
            const double g = self->grad[0];
            for (auto& d : dx) d += g;
        };
        r.set_node(node);
    }
    return r;
}

Tensor Tape::bce_loss(const Tensor& logits, const Tensor& targets) {
    const Shape zs = logits.shape();
    if (!(zs == targets.shape())) {
        throw ShapeError("bce_loss: logits " + zs.str() + " vs targets " + targets.shape().str());
    }
    const auto& zd = logits.data();
    const auto& td = targets.data();
    for (double t : td) {
        if (t != 0.0 && t != 1.0) {
            throw ShapeError("bce_loss: targets must be exactly 0 or 1");
        }
    }
    // mean of max(z,0) - z*t + log(1 + exp(-|z|))
    const double inv = 1.0 / static_cast<double>(zs.numel());
    double acc = 0.0;
    for (std::size_t i = 0; i < zd.size(); ++i) {
        const double z = zd[i];
        acc += std::max(z, 0.0) - z * td[i] + std::log1p(std::exp(-std::fabs(z)));
    }
    acc *= inv;
    if (!std::isfinite(acc)) throw NumericError("op 'bce_loss' produced a non-finite value");

    Tensor r(Shape{1, 1, 1, 1}, std::vector<double>{acc});
    if (track_ && logits.node()) {
        auto node = new_node("bce_loss", r.shape());
        GradNode* self = node.get();
        auto zn = logits.node();
        auto zbuf = logits.buffer();
        auto tbuf = targets.buffer();
        node->backprop = [self, zn, zbuf, tbuf, inv] {
            auto& dz = zn->ensure_grad();
            const auto& zd = *zbuf;
            const auto& td = *tbuf;
            const double g = self->grad[0] * inv;
            for (std::size_t i = 0; i < dz.size(); ++i) {
                dz[i] += g * (stable_sigmoid(zd[i]) - td[i]);
            }
        };
        r.set_node(node);
    }
    return r;
}

void Tape::backward(const Tensor& scalar_out) {
    if (!track_) throw ConfigError("backward called on a non-tracking tape");
    if (backward_done_) throw ConfigError("backward may be called once per tape");
    if (!scalar_out.node()) throw ConfigError("backward target is not tracked by this tape");
    if (scalar_out.numel() != 1) {
        throw ShapeError("backward target must be scalar, got " + scalar_out.shape().str());
    }
    scalar_out.node()->ensure_grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        GradNode& n = **it;
        if (!n.grad.empty() && n.backprop) n.backprop();
    }
    backward_done_ = true;
}

}  // namespace casnet
