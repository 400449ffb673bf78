#pragma once

#include <opencv2/core.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>

#include "relief/common.hpp"
#include "relief/ps_solver.hpp"

namespace relief {

/// Surface slopes p = dz/dx, q = dz/dy (z and x,y in the same unit).
struct GradientField {
    cv::Mat1d p, q;
};

/// Heights in micrometres, zero mean.
struct DepthMap {
    cv::Mat1d z_um;
};

enum class Boundary {
    Mirror,    // mirror-pad to 2W x 2H before the transform (default)
    Periodic,  // no padding; exact for fields periodic on the grid
};

/// p = -nx/nz, q = -ny/nz with nz clamped below at 0.05; zero at invalid
/// pixels.
inline GradientField normals_to_gradients(const NormalMap& normals) {
    GradientField g;
    g.p = cv::Mat1d(normals.vectors.size(), 0.0);
    g.q = cv::Mat1d(normals.vectors.size(), 0.0);
    for (int y = 0; y < normals.vectors.rows; ++y) {
        for (int x = 0; x < normals.vectors.cols; ++x) {
            if (!normals.validity(y, x)) continue;
            cv::Vec3f nv = normals.vectors(y, x);
            double nz = std::max(0.05, static_cast<double>(nv[2]));
            g.p(y, x) = -nv[0] / nz;
            g.q(y, x) = -nv[1] / nz;
        }
    }
    return g;
}

namespace detail {

/// DFT angular frequency for bin k of N, with the Nyquist bin zeroed so the
/// derivative operator stays skew-symmetric.
inline double dft_omega(int k, int n) {
    int f = (2 * k <= n) ? k : k - n;
    if (n % 2 == 0 && k == n / 2) return 0.0;
    return 2.0 * std::numbers::pi * f / n;
}

/// Mirror extension to 2H x 2W. Sign conventions: a gradient component is
/// negated across the axis it differentiates along, so the extension is the
/// gradient of the mirrored surface.
inline cv::Mat1d mirror_extend(const cv::Mat1d& src, bool flip_x, bool flip_y) {
    const int W = src.cols, H = src.rows;
    cv::Mat1d ext(2 * H, 2 * W);
    for (int y = 0; y < 2 * H; ++y) {
        int ym = y < H ? y : 2 * H - 1 - y;
        double sy = (y < H || !flip_y) ? 1.0 : -1.0;
        for (int x = 0; x < 2 * W; ++x) {
            int xm = x < W ? x : 2 * W - 1 - x;
            double sx = (x < W || !flip_x) ? 1.0 : -1.0;
            ext(y, x) = sx * sy * src(ym, xm);
        }
    }
    return ext;
}

inline void forward_dft(const cv::Mat1d& real, cv::Mat2d& spec) {
    cv::Mat planes[] = {real, cv::Mat1d::zeros(real.size())};
    cv::Mat complex;
    cv::merge(planes, 2, complex);
    cv::dft(complex, spec, cv::DFT_COMPLEX_OUTPUT);
}

inline cv::Mat1d inverse_dft_real(const cv::Mat2d& spec) {
    cv::Mat complex;
    cv::dft(spec, complex, cv::DFT_INVERSE | cv::DFT_SCALE);
    cv::Mat planes[2];
    cv::split(complex, planes);
    return planes[0];
}

}  // namespace detail

/// Frequency-domain integrability projection (Frankot-Chellappa): the depth
/// spectrum is Z = (-j wx P - j wy Q) / (wx^2 + wy^2) with zero DC. Slopes
/// are per-pixel; the result is scaled by the pitch and mean-removed.
inline DepthMap integrate_frankot_chellappa(const GradientField& grad,
                                            double pitch_um,
                                            Boundary boundary = Boundary::Mirror) {
    const int W = grad.p.cols, H = grad.p.rows;
    if (W < 2 || H < 2) throw input_error("gradient field too small");

    cv::Mat1d p, q;
    if (boundary == Boundary::Mirror) {
        p = detail::mirror_extend(grad.p, true, false);
        q = detail::mirror_extend(grad.q, false, true);
    } else {
        p = grad.p.clone();
        q = grad.q.clone();
    }
    const int Wp = p.cols, Hp = p.rows;

    cv::Mat2d P, Q;
    detail::forward_dft(p, P);
    detail::forward_dft(q, Q);

    cv::Mat2d Z(Hp, Wp, cv::Vec2d(0, 0));
    for (int ky = 0; ky < Hp; ++ky) {
        double wy = detail::dft_omega(ky, Hp);
        for (int kx = 0; kx < Wp; ++kx) {
            double wx = detail::dft_omega(kx, Wp);
            double denom = wx * wx + wy * wy;
            if (denom == 0.0) continue;
            cv::Vec2d pv = P(ky, kx), qv = Q(ky, kx);
            // -j*(wx*P + wy*Q) / denom
            double re = wx * pv[0] + wy * qv[0];
            double im = wx * pv[1] + wy * qv[1];
            Z(ky, kx) = cv::Vec2d(im / denom, -re / denom);
        }
    }

    cv::Mat1d z = detail::inverse_dft_real(Z);
    DepthMap depth;
    depth.z_um = cv::Mat1d(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) depth.z_um(y, x) = z(y, x) * pitch_um;
    depth.z_um -= cv::mean(depth.z_um)[0];
    return depth;
}

/// Spectral gradients of a depth map, the exact adjoint of the integration
/// above (same padding and frequency conventions); useful for round-trip
/// checks.
inline GradientField depth_to_gradients_spectral(
    const DepthMap& depth, double pitch_um,
    Boundary boundary = Boundary::Mirror) {
    const int W = depth.z_um.cols, H = depth.z_um.rows;
    cv::Mat1d z = depth.z_um / pitch_um;
    if (boundary == Boundary::Mirror) z = detail::mirror_extend(z, false, false);
    const int Wp = z.cols, Hp = z.rows;

    cv::Mat2d Zs;
    detail::forward_dft(z, Zs);
    cv::Mat2d P(Hp, Wp), Q(Hp, Wp);
    for (int ky = 0; ky < Hp; ++ky) {
        double wy = detail::dft_omega(ky, Hp);
        for (int kx = 0; kx < Wp; ++kx) {
            double wx = detail::dft_omega(kx, Wp);
            cv::Vec2d zv = Zs(ky, kx);
            P(ky, kx) = cv::Vec2d(-wx * zv[1], wx * zv[0]);
            Q(ky, kx) = cv::Vec2d(-wy * zv[1], wy * zv[0]);
        }
    }
    GradientField g;
    g.p = detail::inverse_dft_real(P)(cv::Rect(0, 0, W, H)).clone();
    g.q = detail::inverse_dft_real(Q)(cv::Rect(0, 0, W, H)).clone();
    return g;
}

/// Regular-grid triangle mesh in micrometres, ASCII PLY.
inline void export_mesh(const DepthMap& depth, double pitch_um,
                        const std::filesystem::path& path) {
    const int W = depth.z_um.cols, H = depth.z_um.rows;
    std::ofstream out(path);
    if (!out) throw input_error("cannot write mesh: " + path.string());
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << static_cast<long long>(W) * H << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "element face " << 2LL * (W - 1) * (H - 1) << "\n";
    out << "property list uchar int vertex_indices\nend_header\n";
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            out << x * pitch_um << " " << y * pitch_um << " "
                << depth.z_um(y, x) << "\n";
    for (int y = 0; y + 1 < H; ++y) {
        for (int x = 0; x + 1 < W; ++x) {
            int a = y * W + x, b = a + 1, c = a + W, d = c + 1;
            out << "3 " << a << " " << c << " " << b << "\n";
            out << "3 " << b << " " << c << " " << d << "\n";
        }
    }
    if (!out) throw input_error("error writing mesh: " + path.string());
}

}  // namespace relief
