// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/losses.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <vector>

using namespace fleg;

namespace {

// ---- independent oracles, kept free of the library implementation ----

// Direct windowed SSIM straight from the definition: explicit 11x11 loops,
// no separable filtering.
double ssim_reference(const Image& a, const Image& b) {
    const int win = 11, half = 5;
    double window[11][11];
    double wsum = 0.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double di = i - half, dj = j - half;
            window[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
            wsum += window[i][j];
        }
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j)
            window[i][j] /= wsum;

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        double channel = 0.0;
        int count = 0;
        for (int cy = half; cy < a.height - half; ++cy)
            for (int cx = half; cx < a.width - half; ++cx) {
                double mu1 = 0.0, mu2 = 0.0, m11 = 0.0, m22 = 0.0, m12 = 0.0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double w = window[i][j];
                        const double x = a.at(cy + i - half, cx + j - half, c);
                        const double y = b.at(cy + i - half, cx + j - half, c);
                        mu1 += w * x;
                        mu2 += w * y;
                        m11 += w * x * x;
                        m22 += w * y * y;
                        m12 += w * x * y;
                    }
                const double var1 = m11 - mu1 * mu1, var2 = m22 - mu2 * mu2, cov = m12 - mu1 * mu2;
                channel += ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) /
                           ((mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2));
                ++count;
            }
        total += channel / count;
    }
    return total / 3.0;
}

// Naive double-loop contrastive reference (full sampling).
double contrastive_reference(const FeatureMap& feat, const InstanceMask& mask, double alpha) {
    const int d = feat.dim;
    const size_t n = feat.data.size() / d;
    std::map<uint32_t, std::vector<size_t>> by_id;
    for (size_t p = 0; p < n; ++p)
        if (mask.data[p] != 0)
            by_id[mask.data[p]].push_back(p);

    std::map<uint32_t, std::vector<double>> anchors;
    for (const auto& [id, pixels] : by_id) {
        std::vector<double> anchor(d, 0.0);
        for (size_t p : pixels)
            for (int k = 0; k < d; ++k)
                anchor[k] += feat.data[p * d + k];
        double norm = 0.0;
        for (double& v : anchor) {
            v /= double(pixels.size());
        }
        for (double v : anchor)
            norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : anchor)
            v /= norm;
        anchors[id] = anchor;
    }

    auto cosine = [&](const std::vector<double>& anchor, size_t p) {
        double dot = 0.0, norm = 0.0;
        for (int k = 0; k < d; ++k) {
            dot += anchor[k] * feat.data[p * d + k];
            norm += feat.data[p * d + k] * feat.data[p * d + k];
        }
        return dot / std::sqrt(norm);
    };

    double loss = 0.0;
    for (const auto& [id, pixels] : by_id) {
        double numer = 0.0, denom = 0.0;
        for (const auto& [jd, jpixels] : by_id)
            for (size_t p : jpixels) {
                const double e = std::exp(cosine(anchors[id], p) / alpha);
                denom += e;
                if (jd == id)
                    numer += e;
            }
        loss -= std::log(numer / denom);
    }
    return loss / double(by_id.size());
}

Image random_image(std::mt19937_64& rng, int h, int w) {
    Image img = Image::zeros(h, w);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : img.data)
        v = u(rng);
    return img;
}

FeatureMap random_features(std::mt19937_64& rng, int h, int w, int d) {
    FeatureMap fm = FeatureMap::zeros(h, w, d);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : fm.data)
        v = u(rng);
    return fm;
}

} // namespace

TEST_SUITE("losses") {

TEST_CASE("ssim of an image with itself is one") {
    std::mt19937_64 rng(1);
    const Image img = random_image(rng, 16, 20);
    CHECK(ssim(img, img) == doctest::Approx(1.0).epsilon(1e-9));
    const Image flat = Image::constant(16, 16, Vec3(0.42, 0.42, 0.42));
    CHECK(ssim(flat, flat) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ssim of zeros vs ones matches the direct reference") {
    const Image zeros = Image::zeros(32, 32);
    const Image ones = Image::constant(32, 32, Vec3(1.0, 1.0, 1.0));
    const double ref = ssim_reference(zeros, ones);
    CHECK(std::fabs(ssim(zeros, ones) - ref) <= 1e-6);
    // analytic: identical variances vanish, S = C1/(1 + C1)
    CHECK(ref == doctest::Approx(1e-4 / (1.0 + 1e-4)).epsilon(1e-9));
}

TEST_CASE("ssim agrees with the direct reference on random pairs") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 8; ++trial) {
        const Image a = random_image(rng, 16 + 2 * trial, 14 + 3 * trial);
        const Image b = random_image(rng, 16 + 2 * trial, 14 + 3 * trial);
        CHECK(std::fabs(ssim(a, b) - ssim_reference(a, b)) <= 1e-6);
        CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
        CHECK(ssim(a, b) >= -1.0);
        CHECK(ssim(a, b) <= 1.0);
    }
}

TEST_CASE("ssim rejects mismatched and undersized images") {
    CHECK_THROWS_AS(ssim(Image::zeros(16, 16), Image::zeros(16, 15)), DataError);
    CHECK_THROWS_AS(ssim(Image::zeros(8, 8), Image::zeros(8, 8)), DataError);
}

TEST_CASE("ssim gradient matches finite differences") {
    std::mt19937_64 rng(3);
    Image a = random_image(rng, 14, 14);
    const Image b = random_image(rng, 14, 14);
    std::vector<double> grad;
    ssim_with_grad(a, b, grad);
    std::uniform_int_distribution<size_t> pick(0, a.data.size() - 1);
    for (int trial = 0; trial < 40; ++trial) {
        const size_t i = pick(rng);
        const double h = 1e-6;
        const double orig = a.data[i];
        a.data[i] = orig + h;
        const double up = ssim(a, b);
        a.data[i] = orig - h;
        const double down = ssim(a, b);
        a.data[i] = orig;
        CHECK(grad[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-4));
    }
}

TEST_CASE("photometric loss analytic cases") {
    const Image zeros = Image::zeros(16, 16);
    const Image half = Image::constant(16, 16, Vec3(0.5, 0.5, 0.5));
    CHECK(photometric_loss(half, half, 0.85) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(photometric_loss(zeros, half, 0.0) == doctest::Approx(0.5).epsilon(1e-12));

    std::mt19937_64 rng(4);
    const Image a = random_image(rng, 16, 16);
    const Image b = random_image(rng, 16, 16);
    CHECK(photometric_loss(a, a, 1.0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(photometric_loss(a, b, 1.0) ==
          doctest::Approx((1.0 - ssim_reference(a, b)) / 2.0).epsilon(1e-6));
}

TEST_CASE("photometric gradient matches finite differences") {
    std::mt19937_64 rng(5);
    Image a = random_image(rng, 13, 13);
    const Image b = random_image(rng, 13, 13);
    std::vector<double> grad;
    photometric_loss_grad(a, b, 0.85, grad);
    std::uniform_int_distribution<size_t> pick(0, a.data.size() - 1);
    for (int trial = 0; trial < 30; ++trial) {
        const size_t i = pick(rng);
        const double h = 1e-6;
        const double orig = a.data[i];
        a.data[i] = orig + h;
        const double up = photometric_loss(a, b, 0.85);
        a.data[i] = orig - h;
        const double down = photometric_loss(a, b, 0.85);
        a.data[i] = orig;
        CHECK(grad[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-4));
    }
}

TEST_CASE("feature cosine loss analytic cases") {
    FeatureMap pred = FeatureMap::zeros(4, 4, 3);
    FeatureMap target = FeatureMap::zeros(4, 4, 3);
    for (int p = 0; p < 16; ++p) {
        pred.data[p * 3 + 0] = 1.0;
        target.data[p * 3 + 0] = 2.5;  // same direction, different magnitude
    }
    CHECK(feature_cosine_loss(pred, target) == doctest::Approx(0.0).epsilon(1e-12));

    for (int p = 0; p < 16; ++p) {
        target.data[p * 3 + 0] = 0.0;
        target.data[p * 3 + 1] = 1.0;  // orthogonal
    }
    CHECK(feature_cosine_loss(pred, target) == doctest::Approx(1.0).epsilon(1e-12));

    for (int p = 0; p < 16; ++p) {
        target.data[p * 3 + 0] = -1.0;
        target.data[p * 3 + 1] = 0.0;  // antipodal
    }
    CHECK(feature_cosine_loss(pred, target) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("feature cosine loss skips zero norms and errors when empty") {
    FeatureMap pred = FeatureMap::zeros(2, 2, 2);
    FeatureMap target = FeatureMap::zeros(2, 2, 2);
    CHECK_THROWS_AS(feature_cosine_loss(pred, target), DataError);

    pred.data[0] = 1.0;
    target.data[0] = 1.0;
    size_t skipped = 0;
    CHECK(feature_cosine_loss(pred, target, nullptr, &skipped) == doctest::Approx(0.0));
    CHECK(skipped == 3);
}

TEST_CASE("feature cosine loss is invariant to per-pixel positive rescaling") {
    std::mt19937_64 rng(6);
    const FeatureMap pred = random_features(rng, 6, 6, 8);
    const FeatureMap target = random_features(rng, 6, 6, 8);
    FeatureMap scaled = pred;
    std::uniform_real_distribution<double> s(0.1, 5.0);
    for (int p = 0; p < 36; ++p) {
        const double f = s(rng);
        for (int k = 0; k < 8; ++k)
            scaled.data[p * 8 + k] *= f;
    }
    CHECK(feature_cosine_loss(pred, target) ==
          doctest::Approx(feature_cosine_loss(scaled, target)).epsilon(1e-12));
}

TEST_CASE("feature cosine gradient matches finite differences") {
    std::mt19937_64 rng(7);
    FeatureMap pred = random_features(rng, 5, 5, 6);
    const FeatureMap target = random_features(rng, 5, 5, 6);
    std::vector<double> grad;
    feature_cosine_loss_grad(pred, target, nullptr, grad);
    std::uniform_int_distribution<size_t> pick(0, pred.data.size() - 1);
    for (int trial = 0; trial < 30; ++trial) {
        const size_t i = pick(rng);
        const double h = 1e-6;
        const double orig = pred.data[i];
        pred.data[i] = orig + h;
        const double up = feature_cosine_loss(pred, target);
        pred.data[i] = orig - h;
        const double down = feature_cosine_loss(pred, target);
        pred.data[i] = orig;
        CHECK(grad[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-4));
    }
}

TEST_CASE("contrastive loss: one instance gives zero") {
    FeatureMap feat = FeatureMap::zeros(4, 4, 3);
    InstanceMask mask = InstanceMask::zeros(4, 4);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : feat.data)
        v = u(rng);
    for (uint32_t& id : mask.data)
        id = 1;
    CHECK(instance_contrastive_loss(feat, mask, 0.07) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("contrastive loss: identical features with equal instances give ln 2") {
    FeatureMap feat = FeatureMap::zeros(4, 4, 3);
    InstanceMask mask = InstanceMask::zeros(4, 4);
    for (int p = 0; p < 16; ++p) {
        feat.data[p * 3 + 0] = 0.6;
        feat.data[p * 3 + 2] = 0.8;
        mask.data[p] = p < 8 ? 1 : 2;
    }
    CHECK(instance_contrastive_loss(feat, mask, 0.1) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("contrastive loss: orthogonal instances match the brute-force value") {
    FeatureMap feat = FeatureMap::zeros(4, 4, 2);
    InstanceMask mask = InstanceMask::zeros(4, 4);
    for (int p = 0; p < 16; ++p) {
        mask.data[p] = p < 8 ? 1 : 2;
        feat.data[p * 2 + (p < 8 ? 0 : 1)] = 1.0;
    }
    const double loss = instance_contrastive_loss(feat, mask, 0.1);
    CHECK(std::fabs(loss - contrastive_reference(feat, mask, 0.1)) <= 1e-9);
    // ratio = 1/(1+e^-10) per anchor
    CHECK(loss == doctest::Approx(std::log(1.0 + std::exp(-10.0))).epsilon(1e-9));
}

TEST_CASE("contrastive loss equals the brute-force reference on random fixtures") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const int h = 6 + int(rng() % 10), w = 6 + int(rng() % 10);
        const int d = 2 + int(rng() % 6);
        const int k = 2 + int(rng() % 5);
        FeatureMap feat = random_features(rng, h, w, d);
        InstanceMask mask = InstanceMask::zeros(h, w);
        for (uint32_t& id : mask.data)
            id = uint32_t(rng() % (k + 1));  // 0 = background
        bool any_fg = false;
        for (uint32_t id : mask.data)
            any_fg = any_fg || id != 0;
        if (!any_fg)
            mask.data[0] = 1;
        const double alpha = 0.05 + 0.2 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        CHECK(std::fabs(instance_contrastive_loss(feat, mask, alpha) -
                        contrastive_reference(feat, mask, alpha)) <= 1e-9);
    }
}

TEST_CASE("contrastive loss is invariant to id relabeling") {
    std::mt19937_64 rng(10);
    FeatureMap feat = random_features(rng, 8, 8, 4);
    InstanceMask mask = InstanceMask::zeros(8, 8);
    for (uint32_t& id : mask.data)
        id = uint32_t(rng() % 4);  // ids 0..3
    InstanceMask relabeled = mask;
    const uint32_t perm[4] = {0, 7, 2, 5};  // permuted nonzero ids
    for (uint32_t& id : relabeled.data)
        id = perm[id];
    CHECK(instance_contrastive_loss(feat, mask, 0.07) ==
          doctest::Approx(instance_contrastive_loss(feat, relabeled, 0.07)).epsilon(1e-12));
}

TEST_CASE("contrastive loss sampling is seeded and deterministic") {
    std::mt19937_64 rng(11);
    FeatureMap feat = random_features(rng, 16, 16, 4);
    InstanceMask mask = InstanceMask::zeros(16, 16);
    for (uint32_t& id : mask.data)
        id = 1 + uint32_t(rng() % 3);
    const double a = instance_contrastive_loss(feat, mask, 0.07, 64, 1234);
    const double b = instance_contrastive_loss(feat, mask, 0.07, 64, 1234);
    const double c = instance_contrastive_loss(feat, mask, 0.07, 64, 999);
    CHECK(a == b);
    CHECK(a != c);  // different draws move the estimate
}

TEST_CASE("contrastive loss errors without foreground") {
    FeatureMap feat = FeatureMap::zeros(4, 4, 2);
    InstanceMask mask = InstanceMask::zeros(4, 4);
    CHECK_THROWS_AS(instance_contrastive_loss(feat, mask, 0.07), DataError);
    CHECK_THROWS_AS(instance_contrastive_loss(feat, mask, 0.0), DataError);
}

TEST_CASE("contrastive gradient matches finite differences") {
    std::mt19937_64 rng(12);
    FeatureMap feat = random_features(rng, 6, 6, 4);
    // keep norms away from zero for a smooth probe
    for (int p = 0; p < 36; ++p)
        feat.data[p * 4] += feat.data[p * 4] >= 0.0 ? 0.5 : -0.5;
    InstanceMask mask = InstanceMask::zeros(6, 6);
    for (uint32_t& id : mask.data)
        id = 1 + uint32_t(rng() % 3);
    std::vector<double> grad;
    const double base = instance_contrastive_loss_grad(feat, mask, 0.1, grad);
    CHECK(base == doctest::Approx(contrastive_reference(feat, mask, 0.1)).epsilon(1e-9));
    std::uniform_int_distribution<size_t> pick(0, feat.data.size() - 1);
    for (int trial = 0; trial < 40; ++trial) {
        const size_t i = pick(rng);
        const double h = 1e-6;
        const double orig = feat.data[i];
        feat.data[i] = orig + h;
        const double up = instance_contrastive_loss(feat, mask, 0.1);
        feat.data[i] = orig - h;
        const double down = instance_contrastive_loss(feat, mask, 0.1);
        feat.data[i] = orig;
        CHECK(grad[i] == doctest::Approx((up - down) / (2 * h)).epsilon(2e-4));
    }
}

TEST_CASE("depth distill analytic cases") {
    DepthMap a = DepthMap::constant(4, 4, 2.0);
    DepthMap b = a;
    CHECK(depth_distill_loss(a, b, {}) == doctest::Approx(0.0));
    for (double& v : b.data)
        v += 0.1;
    CHECK(depth_distill_loss(a, b, {}) == doctest::Approx(0.01).epsilon(1e-12));
    for (size_t i = 0; i < 8; ++i)
        b.data[i] = a.data[i];
    for (size_t i = 8; i < 16; ++i)
        b.data[i] = a.data[i] + 0.2;
    CHECK(depth_distill_loss(a, b, {}) == doctest::Approx(0.02).epsilon(1e-12));

    std::vector<uint8_t> none(16, 0);
    CHECK_THROWS_AS(depth_distill_loss(a, b, none), DataError);
}

TEST_CASE("pose distill analytic cases") {
    PoseEncoding p;
    p.translation = Vec3(0.3, -0.2, 1.0);
    p.rot = Vec4(0.5, 0.5, 0.5, 0.5);
    p.fov = Vec2(0.9, 0.7);
    CHECK(pose_distill_loss(p, p) == doctest::Approx(0.0));

    PoseEncoding neg = p;
    neg.rot = -p.rot;
    CHECK(pose_distill_loss(p, neg) == doctest::Approx(0.0).epsilon(1e-15));

    PoseEncoding off = p;
    off.translation.x() += 0.2;  // 2*delta with delta = 0.1
    CHECK(pose_distill_loss(p, off, 0.1) == doctest::Approx(0.015 / 9.0).epsilon(1e-12));
}

TEST_CASE("total loss composition") {
    LossConfig cfg;  // paper weights 0.1 / 10.0 / 0.05
    const LossReport r = total_loss(0.4, 0.2, 0.1, 0.01, 0.6, cfg);
    CHECK(r.total == 0.4 + 0.2 + 0.1 * 0.1 + 10.0 * 0.01 + 0.05 * 0.6);
    CHECK(r.total == doctest::Approx(0.74).epsilon(1e-15));

    CHECK(total_loss(0.0, 0.0, 0.0, 0.0, 0.0, cfg).total == 0.0);

    LossConfig zeroed = cfg;
    zeroed.lambda_depth = zeroed.lambda_pose = zeroed.lambda_inst = 0.0;
    CHECK(total_loss(0.3, 0.2, 9.0, 9.0, 9.0, zeroed).total == doctest::Approx(0.5));

    // the decomposition identity holds bit for bit
    CHECK(r.total == r.photo + r.feat + r.lambda_depth * r.depth_distill + r.lambda_pose * r.pose_distill +
                         r.lambda_inst * r.inst);
}

} // TEST_SUITE
