// Independent reference implementations used only by tests. Everything here
// is written as plain loops over flat arrays with explicit index arithmetic,
// and never calls into the tape ops it is checking.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline std::int64_t idx4(int n, int h, int w, int c, int H, int W, int C) {
    return ((static_cast<std::int64_t>(n) * H + h) * W + w) * C + c;
}

// per-channel spatial mean, (N,H,W,C) -> (N,C)
inline Vec gap(const Vec& x, int N, int H, int W, int C) {
    Vec out(static_cast<std::size_t>(N) * C, 0.0);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) s += x[idx4(n, h, w, c, H, W, C)];
            out[static_cast<std::size_t>(n) * C + c] = s / (static_cast<double>(H) * W);
        }
    return out;
}

// out[n,co] = sum_ci w[co,ci] x[n,ci] + b[co]
inline Vec linear(const Vec& x, const Vec& w, const Vec& b, int N, int cin, int cout) {
    Vec out(static_cast<std::size_t>(N) * cout, 0.0);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < cout; ++co) {
            double s = b[co];
            for (int ci = 0; ci < cin; ++ci)
                s += w[static_cast<std::size_t>(co) * cin + ci] * x[static_cast<std::size_t>(n) * cin + ci];
            out[static_cast<std::size_t>(n) * cout + co] = s;
        }
    return out;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// six-loop cross-correlation, zero padding; kernel layout (kh,kw,ci,co)
inline Vec conv2d(const Vec& x, int N, int H, int W, int cin, const Vec& k, int kh, int kw,
                  int cout, const Vec& b, int stride, int pad, int& ho_out, int& wo_out) {
    const int ho = (H + 2 * pad - kh) / stride + 1;
    const int wo = (W + 2 * pad - kw) / stride + 1;
    ho_out = ho;
    wo_out = wo;
    Vec out(static_cast<std::size_t>(N) * ho * wo * cout, 0.0);
    for (int n = 0; n < N; ++n)
        for (int oh = 0; oh < ho; ++oh)
            for (int ow = 0; ow < wo; ++ow)
                for (int co = 0; co < cout; ++co) {
                    double s = b[co];
                    for (int fh = 0; fh < kh; ++fh)
                        for (int fw = 0; fw < kw; ++fw)
                            for (int ci = 0; ci < cin; ++ci) {
                                const int ih = oh * stride - pad + fh;
                                const int iw = ow * stride - pad + fw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                s += x[idx4(n, ih, iw, ci, H, W, cin)] *
                                     k[idx4(fh, fw, ci, co, kw, cin, cout)];
                            }
                    out[idx4(n, oh, ow, co, ho, wo, cout)] = s;
                }
    return out;
}

// per-position channel mean/max, (N,H,W,C) -> two (N,H,W) arrays
inline void channel_stats(const Vec& x, int N, int H, int W, int C, Vec& avg, Vec& mx) {
    const std::int64_t P = static_cast<std::int64_t>(N) * H * W;
    avg.assign(P, 0.0);
    mx.assign(P, 0.0);
    for (std::int64_t p = 0; p < P; ++p) {
        double s = 0.0, m = x[p * C];
        for (int c = 0; c < C; ++c) {
            s += x[p * C + c];
            m = std::max(m, x[p * C + c]);
        }
        avg[p] = s / C;
        mx[p] = m;
    }
}

// elementwise product with explicit copying of singleton H/W/C axes
inline Vec broadcast_mul(const Vec& a, int ah, int aw, int ac, const Vec& b, int bh, int bw,
                         int bc, int N) {
    const int H = std::max(ah, bh), W = std::max(aw, bw), C = std::max(ac, bc);
    Vec out(static_cast<std::size_t>(N) * H * W * C);
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < C; ++c) {
                    const double av = a[idx4(n, ah == 1 ? 0 : h, aw == 1 ? 0 : w, ac == 1 ? 0 : c,
                                             ah, aw, ac)];
                    const double bv = b[idx4(n, bh == 1 ? 0 : h, bw == 1 ? 0 : w, bc == 1 ? 0 : c,
                                             bh, bw, bc)];
                    out[idx4(n, h, w, c, H, W, C)] = av * bv;
                }
    return out;
}

// direct (unstable) binary cross-entropy formula; valid away from saturation
inline double bce_direct(const Vec& z, const Vec& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double p = sigmoid(z[i]);
        s += -(t[i] * std::log(p) + (1.0 - t[i]) * std::log(1.0 - p));
    }
    return s / static_cast<double>(z.size());
}

}  // namespace oracle
