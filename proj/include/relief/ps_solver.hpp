#pragma once

#include <opencv2/core.hpp>

#include <cmath>
#include <vector>

#include "relief/common.hpp"
#include "relief/light_calibration.hpp"
#include "relief/raster.hpp"

namespace relief {

/// Per-pixel unit normals with a validity mask for unsolvable pixels
/// (those are filled with (0,0,1)).
struct NormalMap {
    cv::Mat3f vectors;   // (nx, ny, nz)
    cv::Mat1b validity;  // 255 = solved

    int width() const { return vectors.cols; }
    int height() const { return vectors.rows; }
};

struct AlbedoMap {
    cv::Mat1f k;
    cv::Mat3f colored;  // empty unless colorize_albedo ran
};

/// Per-pixel least squares for the scaled normal; albedo is its magnitude.
inline std::pair<NormalMap, AlbedoMap> solve_ps(const ImageStack& stack,
                                                const LightSet& lights) {
    const int n = stack.count();
    if (n < 3 || static_cast<int>(lights.lights.size()) != n)
        throw input_error("need >=3 lights matching the stack");
    const int W = stack.width(), H = stack.height();

    cv::Matx33d lhs = cv::Matx33d::zeros();
    std::vector<cv::Vec3d> dirs(n);
    for (int i = 0; i < n; ++i) {
        dirs[i] = lights.lights[i].direction;
        lhs += dirs[i] * dirs[i].t();
    }
    cv::SVD svd{cv::Mat(lhs)};
    double smax = svd.w.at<double>(0), smin = svd.w.at<double>(2);
    if (!(smax > 0) || smin / smax < 1e-12)
        throw numeric_error("degenerate light geometry");

    NormalMap normals;
    normals.vectors = cv::Mat3f(H, W, cv::Vec3f(0, 0, 1));
    normals.validity = cv::Mat1b(H, W, uchar(0));
    AlbedoMap albedo;
    albedo.k = cv::Mat1f(H, W, 0.0f);

    // ill-conditioned but not rank-deficient: every pixel is unsolvable
    if (smax / smin > 1e8) return {std::move(normals), std::move(albedo)};
    cv::Matx33d lhs_inv = lhs.inv();

    parallel_rows(H, [&](int r0, int r1) {
        for (int y = r0; y < r1; ++y) {
            for (int x = 0; x < W; ++x) {
                cv::Vec3d rhs(0, 0, 0);
                for (int i = 0; i < n; ++i)
                    rhs += static_cast<double>(stack.images[i](y, x)) * dirs[i];
                cv::Vec3d scaled = lhs_inv * rhs;
                double k = cv::norm(scaled);
                if (k < 1e-6) continue;  // stays invalid
                cv::Vec3d nrm = scaled / k;
                if (nrm[2] <= 0) continue;
                normals.vectors(y, x) = cv::Vec3f(nrm);
                normals.validity(y, x) = 255;
                albedo.k(y, x) = static_cast<float>(k);
            }
        }
    });
    return {std::move(normals), std::move(albedo)};
}

/// Scales the color reference per pixel so its luminance matches k.
inline cv::Mat3f colorize_albedo(const AlbedoMap& albedo,
                                 const cv::Mat3f& color_reference) {
    if (color_reference.empty()) {
        cv::Mat3f mono;
        cv::merge(std::vector<cv::Mat>{albedo.k, albedo.k, albedo.k}, mono);
        return mono;
    }
    if (color_reference.size() != albedo.k.size())
        throw input_error("color reference dimension mismatch");
    cv::Mat3f out(albedo.k.size());
    for (int y = 0; y < out.rows; ++y) {
        for (int x = 0; x < out.cols; ++x) {
            cv::Vec3f c = color_reference(y, x);
            double lum = kLumaB * c[0] + kLumaG * c[1] + kLumaR * c[2];
            if (lum <= 0) {
                out(y, x) = cv::Vec3f(0, 0, 0);
            } else {
                out(y, x) = c * static_cast<float>(albedo.k(y, x) / lum);
            }
        }
    }
    return out;
}

}  // namespace relief
