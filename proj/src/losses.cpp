// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/losses.hpp"

#include "fleg/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>

namespace fleg {

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

const std::array<double, kWin>& ssim_window() {
    static const std::array<double, kWin> w = [] {
        std::array<double, kWin> win{};
        double total = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - kHalf;
            win[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            total += win[i];
        }
        for (double& v : win)
            v /= total;
        return win;
    }();
    return w;
}

// Separable valid convolution: (h, w) -> (h-10, w-10), window centers at
// [kHalf, h-kHalf) x [kHalf, w-kHalf).
void conv_valid(const std::vector<double>& src, int h, int w, std::vector<double>& dst,
                std::vector<double>& scratch) {
    const auto& win = ssim_window();
    const int vw = w - kWin + 1;
    const int vh = h - kWin + 1;
    scratch.assign(size_t(h) * vw, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < vw; ++x) {
            double acc = 0.0;
            const double* row = src.data() + size_t(y) * w + x;
            for (int k = 0; k < kWin; ++k)
                acc += win[k] * row[k];
            scratch[size_t(y) * vw + x] = acc;
        }
    dst.assign(size_t(vh) * vw, 0.0);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k)
                acc += win[k] * scratch[size_t(y + k) * vw + x];
            dst[size_t(y) * vw + x] = acc;
        }
}

// Adjoint of conv_valid: scatters valid-grid values back to the full grid.
void conv_valid_adjoint(const std::vector<double>& src, int h, int w, std::vector<double>& dst,
                        std::vector<double>& scratch) {
    const auto& win = ssim_window();
    const int vw = w - kWin + 1;
    const int vh = h - kWin + 1;
    scratch.assign(size_t(h) * vw, 0.0);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            const double v = src[size_t(y) * vw + x];
            if (v == 0.0)
                continue;
            for (int k = 0; k < kWin; ++k)
                scratch[size_t(y + k) * vw + x] += win[k] * v;
        }
    dst.assign(size_t(h) * w, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < vw; ++x) {
            const double v = scratch[size_t(y) * vw + x];
            if (v == 0.0)
                continue;
            double* row = dst.data() + size_t(y) * w + x;
            for (int k = 0; k < kWin; ++k)
                row[k] += win[k] * v;
        }
}

void check_same_size(const Image& a, const Image& b, const char* who) {
    if (a.height != b.height || a.width != b.width)
        throw DataError(std::string(who) + ": image dimensions differ");
}

std::vector<double> channel_plane(const Image& img, int c) {
    std::vector<double> plane(size_t(img.height) * img.width);
    for (size_t p = 0; p < plane.size(); ++p)
        plane[p] = img.data[p * 3 + c];
    return plane;
}

double ssim_impl(const Image& a, const Image& b, std::vector<double>* d_a) {
    check_same_size(a, b, "ssim");
    const int h = a.height, w = a.width;
    if (h < kWin || w < kWin)
        throw DataError("ssim: image smaller than the 11x11 window");
    const int vh = h - kWin + 1, vw = w - kWin + 1;
    const size_t n_valid = size_t(vh) * vw;
    if (d_a)
        d_a->assign(size_t(h) * w * 3, 0.0);

    double total = 0.0;
    std::vector<double> mu1, mu2, s11, s22, s12, scratch, plane_sq, plane_xy;
    std::vector<double> g_mu1, g_s11, g_s12, back, back2, back3;
    for (int c = 0; c < 3; ++c) {
        const std::vector<double> x = channel_plane(a, c);
        const std::vector<double> y = channel_plane(b, c);
        conv_valid(x, h, w, mu1, scratch);
        conv_valid(y, h, w, mu2, scratch);
        plane_sq.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i)
            plane_sq[i] = x[i] * x[i];
        conv_valid(plane_sq, h, w, s11, scratch);
        for (size_t i = 0; i < y.size(); ++i)
            plane_sq[i] = y[i] * y[i];
        conv_valid(plane_sq, h, w, s22, scratch);
        plane_xy.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i)
            plane_xy[i] = x[i] * y[i];
        conv_valid(plane_xy, h, w, s12, scratch);

        if (d_a) {
            g_mu1.assign(n_valid, 0.0);
            g_s11.assign(n_valid, 0.0);
            g_s12.assign(n_valid, 0.0);
        }
        double channel_sum = 0.0;
        for (size_t p = 0; p < n_valid; ++p) {
            const double m1 = mu1[p], m2 = mu2[p];
            const double var1 = s11[p] - m1 * m1;
            const double var2 = s22[p] - m2 * m2;
            const double cov = s12[p] - m1 * m2;
            const double a1 = 2.0 * m1 * m2 + kSsimC1;
            const double a2 = 2.0 * cov + kSsimC2;
            const double b1 = m1 * m1 + m2 * m2 + kSsimC1;
            const double b2 = var1 + var2 + kSsimC2;
            const double s = (a1 * a2) / (b1 * b2);
            channel_sum += s;
            if (d_a) {
                g_mu1[p] = (2.0 * m2 * a2 - 2.0 * m2 * a1) / (b1 * b2) - s * (2.0 * m1 / b1 - 2.0 * m1 / b2);
                g_s11[p] = -s / b2;
                g_s12[p] = 2.0 * a1 / (b1 * b2);
            }
        }
        total += channel_sum / double(n_valid);
        if (d_a) {
            conv_valid_adjoint(g_mu1, h, w, back, scratch);
            conv_valid_adjoint(g_s11, h, w, back2, scratch);
            conv_valid_adjoint(g_s12, h, w, back3, scratch);
            const double norm = 1.0 / (3.0 * double(n_valid));
            for (size_t i = 0; i < x.size(); ++i)
                (*d_a)[i * 3 + c] = norm * (back[i] + 2.0 * x[i] * back2[i] + y[i] * back3[i]);
        }
    }
    return total / 3.0;
}

} // namespace

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, nullptr); }

double ssim_with_grad(const Image& a, const Image& b, std::vector<double>& d_a) {
    return ssim_impl(a, b, &d_a);
}

double photometric_loss(const Image& rendered, const Image& target, double eta) {
    check_same_size(rendered, target, "photometric_loss");
    if (eta < 0.0 || eta > 1.0)
        throw DataError("photometric_loss: eta outside [0,1]");
    const double l1 =
        kernels::abs_diff_sum(rendered.data.data(), target.data.data(), rendered.data.size()) /
        double(rendered.data.size());
    const double structure = eta > 0.0 ? (1.0 - ssim(rendered, target)) / 2.0 : 0.0;
    return eta * structure + (1.0 - eta) * l1;
}

double photometric_loss_grad(const Image& rendered, const Image& target, double eta,
                             std::vector<double>& d_rendered) {
    check_same_size(rendered, target, "photometric_loss");
    d_rendered.assign(rendered.data.size(), 0.0);
    const double inv_n = 1.0 / double(rendered.data.size());
    // sign deadband: pure rounding noise must not register as an L1 direction,
    // or an optimizer sitting at the optimum walks away on full-size steps
    constexpr double kSignDeadband = 1e-12;
    double l1 = 0.0;
    for (size_t i = 0; i < rendered.data.size(); ++i) {
        const double d = rendered.data[i] - target.data[i];
        l1 += std::fabs(d);
        d_rendered[i] = (1.0 - eta) * (d > kSignDeadband ? inv_n : (d < -kSignDeadband ? -inv_n : 0.0));
    }
    l1 *= inv_n;
    double structure = 0.0;
    if (eta > 0.0) {
        std::vector<double> d_ssim;
        structure = (1.0 - ssim_with_grad(rendered, target, d_ssim)) / 2.0;
        for (size_t i = 0; i < d_rendered.size(); ++i)
            d_rendered[i] -= eta * 0.5 * d_ssim[i];
    }
    return eta * structure + (1.0 - eta) * l1;
}

double feature_cosine_loss(const FeatureMap& pred, const FeatureMap& target,
                           const std::vector<uint8_t>* valid, size_t* skipped) {
    if (pred.height != target.height || pred.width != target.width || pred.dim != target.dim)
        throw DataError("feature_cosine_loss: dimension mismatch");
    const size_t n_px = size_t(pred.height) * pred.width;
    const int d = pred.dim;
    double acc = 0.0;
    size_t count = 0, zero_norm = 0;
    for (size_t p = 0; p < n_px; ++p) {
        if (valid && !(*valid)[p])
            continue;
        const double* fp = pred.data.data() + p * d;
        const double* ft = target.data.data() + p * d;
        const double np = std::sqrt(kernels::sumsq(fp, d));
        const double nt = std::sqrt(kernels::sumsq(ft, d));
        if (np == 0.0 || nt == 0.0) {
            ++zero_norm;
            continue;
        }
        acc += 1.0 - kernels::dot(fp, ft, d) / (np * nt);
        ++count;
    }
    if (skipped)
        *skipped = zero_norm;
    if (count == 0)
        throw DataError("feature_cosine_loss: no valid features");
    return acc / double(count);
}

double feature_cosine_loss_grad(const FeatureMap& pred, const FeatureMap& target,
                                const std::vector<uint8_t>* valid, std::vector<double>& d_pred) {
    if (pred.height != target.height || pred.width != target.width || pred.dim != target.dim)
        throw DataError("feature_cosine_loss: dimension mismatch");
    const size_t n_px = size_t(pred.height) * pred.width;
    const int d = pred.dim;
    d_pred.assign(pred.data.size(), 0.0);
    // first pass for the count, second for the gradient scale
    size_t count = 0;
    for (size_t p = 0; p < n_px; ++p) {
        if (valid && !(*valid)[p])
            continue;
        const double np = std::sqrt(kernels::sumsq(pred.data.data() + p * d, d));
        const double nt = std::sqrt(kernels::sumsq(target.data.data() + p * d, d));
        if (np != 0.0 && nt != 0.0)
            ++count;
    }
    if (count == 0)
        throw DataError("feature_cosine_loss: no valid features");
    const double inv_count = 1.0 / double(count);
    double acc = 0.0;
    for (size_t p = 0; p < n_px; ++p) {
        if (valid && !(*valid)[p])
            continue;
        const double* fp = pred.data.data() + p * d;
        const double* ft = target.data.data() + p * d;
        const double np = std::sqrt(kernels::sumsq(fp, d));
        const double nt = std::sqrt(kernels::sumsq(ft, d));
        if (np == 0.0 || nt == 0.0)
            continue;
        const double cosv = kernels::dot(fp, ft, d) / (np * nt);
        acc += 1.0 - cosv;
        double* g = d_pred.data() + p * d;
        for (int k = 0; k < d; ++k)
            g[k] = -inv_count * (ft[k] / (np * nt) - cosv * fp[k] / (np * np));
    }
    return acc * inv_count;
}

namespace {

struct ContrastiveSetup {
    std::vector<uint32_t> ids;                     // instance id per anchor (K entries)
    std::vector<std::vector<double>> anchors;      // normalized anchor features
    std::vector<double> anchor_norms;              // raw anchor norms
    std::vector<std::vector<double>> anchor_raw;   // raw (unnormalized) anchors
    std::vector<std::vector<size_t>> members_all;  // all foreground pixels per instance
    std::vector<size_t> sampled;                   // pixel indices in the softmax sums
    std::vector<int> instance_of_sampled;          // position in `ids`, -1 for dropped instances
};

ContrastiveSetup contrastive_setup(const FeatureMap& feat, const InstanceMask& mask, std::optional<int> sample,
                                   uint64_t seed) {
    if (feat.height != mask.height || feat.width != mask.width)
        throw DataError("instance_contrastive_loss: mask/feature dimensions differ");
    const size_t n_px = size_t(feat.height) * feat.width;
    const int d = feat.dim;

    std::map<uint32_t, std::vector<size_t>> by_id;
    for (size_t p = 0; p < n_px; ++p)
        if (mask.data[p] != 0)
            by_id[mask.data[p]].push_back(p);
    if (by_id.empty())
        throw DataError("instance_contrastive_loss: zero foreground pixels");

    ContrastiveSetup setup;
    size_t total_fg = 0;
    for (const auto& [id, pixels] : by_id)
        total_fg += pixels.size();

    // sampled pixel set: proportional per-instance quota, largest remainder
    std::map<uint32_t, std::vector<size_t>> sampled_by_id;
    if (sample && size_t(*sample) < total_fg) {
        const int budget = *sample;
        std::vector<std::pair<double, uint32_t>> remainders;
        std::map<uint32_t, int> quota;
        int assigned = 0;
        for (const auto& [id, pixels] : by_id) {
            const double exact = double(budget) * double(pixels.size()) / double(total_fg);
            quota[id] = int(exact);
            assigned += int(exact);
            remainders.push_back({exact - int(exact), id});
        }
        std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        for (int r = 0; r < budget - assigned && size_t(r) < remainders.size(); ++r)
            quota[remainders[r].second] += 1;

        std::mt19937_64 rng(seed);
        for (const auto& [id, pixels] : by_id) {
            const int q = std::min<int>(quota[id], int(pixels.size()));
            if (q == 0) {
                std::fprintf(stderr, "fleg: contrastive: instance %u received no samples, dropped\n", id);
                continue;
            }
            std::vector<size_t> chosen;
            std::sample(pixels.begin(), pixels.end(), std::back_inserter(chosen), q, rng);
            sampled_by_id[id] = std::move(chosen);
        }
        if (sampled_by_id.empty())
            throw DataError("instance_contrastive_loss: sampling produced no pixels");
    } else {
        sampled_by_id = by_id;
    }

    for (const auto& [id, pixels] : by_id) {
        if (!sampled_by_id.count(id))
            continue;
        std::vector<double> anchor(d, 0.0);
        for (size_t p : pixels)
            kernels::axpy(1.0, feat.data.data() + p * d, anchor.data(), d);
        for (double& v : anchor)
            v /= double(pixels.size());
        const double norm = std::sqrt(kernels::sumsq(anchor.data(), d));
        if (norm == 0.0) {
            std::fprintf(stderr, "fleg: contrastive: instance %u has zero-norm anchor, dropped\n", id);
            continue;
        }
        setup.ids.push_back(id);
        setup.anchor_raw.push_back(anchor);
        for (double& v : anchor)
            v /= norm;
        setup.anchors.push_back(std::move(anchor));
        setup.anchor_norms.push_back(norm);
        setup.members_all.push_back(pixels);
    }
    if (setup.ids.empty())
        throw DataError("instance_contrastive_loss: no usable instances");

    std::map<uint32_t, int> rank;
    for (size_t k = 0; k < setup.ids.size(); ++k)
        rank[setup.ids[k]] = int(k);
    for (const auto& [id, pixels] : sampled_by_id) {
        const auto it = rank.find(id);
        for (size_t p : pixels) {
            setup.sampled.push_back(p);
            setup.instance_of_sampled.push_back(it == rank.end() ? -1 : it->second);
        }
    }
    return setup;
}

} // namespace

double instance_contrastive_loss(const FeatureMap& feat, const InstanceMask& mask, double alpha,
                                 std::optional<int> sample, uint64_t seed) {
    if (!(alpha > 0.0))
        throw DataError("instance_contrastive_loss: alpha must be positive");
    const ContrastiveSetup setup = contrastive_setup(feat, mask, sample, seed);
    const int d = feat.dim;
    const size_t k_count = setup.ids.size();

    double loss = 0.0;
    std::vector<double> unit(d);
    std::vector<double> numer(k_count, 0.0), denom(k_count, 0.0);
    for (size_t j = 0; j < setup.sampled.size(); ++j) {
        const double* f = feat.data.data() + setup.sampled[j] * d;
        const double norm = std::sqrt(kernels::sumsq(f, d));
        if (norm == 0.0)
            continue;
        for (int t = 0; t < d; ++t)
            unit[t] = f[t] / norm;
        for (size_t k = 0; k < k_count; ++k) {
            const double sim = kernels::dot(setup.anchors[k].data(), unit.data(), d);
            const double e = std::exp(sim / alpha);
            denom[k] += e;
            if (setup.instance_of_sampled[j] == int(k))
                numer[k] += e;
        }
    }
    for (size_t k = 0; k < k_count; ++k) {
        if (numer[k] <= 0.0 || denom[k] <= 0.0)
            throw DataError("instance_contrastive_loss: empty softmax sums");
        loss -= std::log(numer[k] / denom[k]);
    }
    return loss / double(k_count);
}

double instance_contrastive_loss_grad(const FeatureMap& feat, const InstanceMask& mask, double alpha,
                                      std::vector<double>& d_feat) {
    if (!(alpha > 0.0))
        throw DataError("instance_contrastive_loss: alpha must be positive");
    const ContrastiveSetup setup = contrastive_setup(feat, mask, std::nullopt, 0);
    const int d = feat.dim;
    const size_t k_count = setup.ids.size();
    const size_t n_sampled = setup.sampled.size();
    d_feat.assign(feat.data.size(), 0.0);

    // cache normalized pixels and similarity exponentials
    std::vector<double> units(n_sampled * size_t(d), 0.0);
    std::vector<double> norms(n_sampled, 0.0);
    std::vector<double> expsim(n_sampled * k_count, 0.0);
    std::vector<double> numer(k_count, 0.0), denom(k_count, 0.0);
    for (size_t j = 0; j < n_sampled; ++j) {
        const double* f = feat.data.data() + setup.sampled[j] * d;
        const double norm = std::sqrt(kernels::sumsq(f, d));
        norms[j] = norm;
        if (norm == 0.0)
            continue;
        double* u = units.data() + j * d;
        for (int t = 0; t < d; ++t)
            u[t] = f[t] / norm;
        for (size_t k = 0; k < k_count; ++k) {
            const double sim = kernels::dot(setup.anchors[k].data(), u, d);
            const double e = std::exp(sim / alpha);
            expsim[j * k_count + k] = e;
            denom[k] += e;
            if (setup.instance_of_sampled[j] == int(k))
                numer[k] += e;
        }
    }
    double loss = 0.0;
    for (size_t k = 0; k < k_count; ++k) {
        if (numer[k] <= 0.0 || denom[k] <= 0.0)
            throw DataError("instance_contrastive_loss: empty softmax sums");
        loss -= std::log(numer[k] / denom[k]);
    }
    loss /= double(k_count);

    // dL/dsim_kj, routed through both the pixel side and the anchor side
    std::vector<double> anchor_accum(k_count * size_t(d), 0.0);  // sum_j dsim * (u_j - sim*fhat_k)
    for (size_t j = 0; j < n_sampled; ++j) {
        if (norms[j] == 0.0)
            continue;
        const double* u = units.data() + j * d;
        double* g = d_feat.data() + setup.sampled[j] * d;
        for (size_t k = 0; k < k_count; ++k) {
            const double e = expsim[j * k_count + k];
            const double in_pos = setup.instance_of_sampled[j] == int(k) ? 1.0 : 0.0;
            const double dL_de = -(in_pos / numer[k] - 1.0 / denom[k]) / double(k_count);
            const double dL_dsim = dL_de * e / alpha;
            if (dL_dsim == 0.0)
                continue;
            const double* fhat = setup.anchors[k].data();
            const double sim = kernels::dot(fhat, u, d);
            // pixel side: dsim/df_j = (fhat - sim*u)/|f_j|
            for (int t = 0; t < d; ++t)
                g[t] += dL_dsim * (fhat[t] - sim * u[t]) / norms[j];
            // anchor side accumulates per k
            double* acc = anchor_accum.data() + k * size_t(d);
            for (int t = 0; t < d; ++t)
                acc[t] += dL_dsim * (u[t] - sim * fhat[t]);
        }
    }
    // anchors are means of raw member features
    for (size_t k = 0; k < k_count; ++k) {
        const double* acc = anchor_accum.data() + k * size_t(d);
        const double scale = 1.0 / (setup.anchor_norms[k] * double(setup.members_all[k].size()));
        for (size_t p : setup.members_all[k]) {
            double* g = d_feat.data() + p * d;
            for (int t = 0; t < d; ++t)
                g[t] += scale * acc[t];
        }
    }
    return loss;
}

double depth_distill_loss(const DepthMap& rendered, const DepthMap& pseudo,
                          const std::vector<uint8_t>& valid) {
    if (rendered.height != pseudo.height || rendered.width != pseudo.width)
        throw DataError("depth_distill_loss: dimension mismatch");
    double acc = 0.0;
    size_t count = 0;
    for (size_t p = 0; p < rendered.data.size(); ++p) {
        if (!valid.empty() && !valid[p])
            continue;
        const double d = rendered.data[p] - pseudo.data[p];
        acc += d * d;
        ++count;
    }
    if (count == 0)
        throw DataError("depth_distill_loss: no valid pixels");
    return acc / double(count);
}

double depth_distill_loss_grad(const DepthMap& rendered, const DepthMap& pseudo,
                               const std::vector<uint8_t>& valid, std::vector<double>& d_rendered) {
    if (rendered.height != pseudo.height || rendered.width != pseudo.width)
        throw DataError("depth_distill_loss: dimension mismatch");
    d_rendered.assign(rendered.data.size(), 0.0);
    size_t count = 0;
    for (size_t p = 0; p < rendered.data.size(); ++p)
        if (valid.empty() || valid[p])
            ++count;
    if (count == 0)
        throw DataError("depth_distill_loss: no valid pixels");
    double acc = 0.0;
    for (size_t p = 0; p < rendered.data.size(); ++p) {
        if (!valid.empty() && !valid[p])
            continue;
        const double d = rendered.data[p] - pseudo.data[p];
        acc += d * d;
        d_rendered[p] = 2.0 * d / double(count);
    }
    return acc / double(count);
}

double pose_distill_loss(const PoseEncoding& pred, const PoseEncoding& pseudo, double delta) {
    Vec4 q = pseudo.rot;
    if (pred.rot.dot(q) < 0.0)
        q = -q;  // q and -q encode the same rotation
    double err[9];
    for (int k = 0; k < 3; ++k)
        err[k] = pred.translation[k] - pseudo.translation[k];
    for (int k = 0; k < 4; ++k)
        err[3 + k] = pred.rot[k] - q[k];
    err[7] = pred.fov[0] - pseudo.fov[0];
    err[8] = pred.fov[1] - pseudo.fov[1];
    double acc = 0.0;
    for (double e : err) {
        const double a = std::fabs(e);
        acc += a <= delta ? 0.5 * e * e : delta * (a - 0.5 * delta);
    }
    return acc / 9.0;
}

LossReport total_loss(double photo, double feat, double depth_distill, double pose_distill, double inst,
                      const LossConfig& cfg) {
    LossReport r;
    r.photo = photo;
    r.feat = feat;
    r.depth_distill = depth_distill;
    r.pose_distill = pose_distill;
    r.inst = inst;
    r.lambda_depth = cfg.lambda_depth;
    r.lambda_pose = cfg.lambda_pose;
    r.lambda_inst = cfg.lambda_inst;
    r.total = photo + feat + cfg.lambda_depth * depth_distill + cfg.lambda_pose * pose_distill +
              cfg.lambda_inst * inst;
    return r;
}

} // namespace fleg
