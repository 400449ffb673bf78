#pragma once

#include <opencv2/core.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include "relief/common.hpp"
#include "relief/raster.hpp"

namespace relief {

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Legendre P0..P4 on [-1,1].
inline double legendre(int n, double x) {
    switch (n) {
        case 0: return 1.0;
        case 1: return x;
        case 2: return 0.5 * (3.0 * x * x - 1.0);
        case 3: return 0.5 * x * (5.0 * x * x - 3.0);
        case 4: {
            double x2 = x * x;
            return 0.125 * (35.0 * x2 * x2 - 30.0 * x2 + 3.0);
        }
        default: throw numeric_error("legendre degree out of range");
    }
}

/// Smooth illumination model: 2D Legendre expansion over normalized
/// coordinates, scaled so its mean over the fitted grid is 1.
struct PolySurface {
    int degree = 2;
    int grid_width = 0;
    int grid_height = 0;
    std::vector<std::pair<int, int>> terms;  // (i,j) with i+j <= degree
    std::vector<double> coefficients;        // per term, post-normalization
    double mean_value = 0.0;                 // grid mean before normalization

    /// Normalized coordinate of pixel column/row (endpoints map to +-1).
    static double norm_coord(int idx, int extent) {
        return extent > 1 ? -1.0 + 2.0 * idx / (extent - 1) : 0.0;
    }

    double eval_norm(double xn, double yn) const {
        double v = 0.0;
        for (size_t t = 0; t < terms.size(); ++t)
            v += coefficients[t] * legendre(terms[t].first, xn) *
                 legendre(terms[t].second, yn);
        return v;
    }

    double eval_pixel(double x, double y) const {
        double xn = grid_width > 1 ? -1.0 + 2.0 * x / (grid_width - 1) : 0.0;
        double yn = grid_height > 1 ? -1.0 + 2.0 * y / (grid_height - 1) : 0.0;
        return eval_norm(xn, yn);
    }

    cv::Mat1f render() const {
        cv::Mat1f out(grid_height, grid_width);
        for (int y = 0; y < grid_height; ++y) {
            double yn = norm_coord(y, grid_height);
            for (int x = 0; x < grid_width; ++x)
                out(y, x) = static_cast<float>(eval_norm(norm_coord(x, grid_width), yn));
        }
        return out;
    }
};

/// Unit illumination direction; x,y follow image axes (x right, y down in
/// raster order), z toward the camera.
struct LightVector {
    cv::Vec3d direction{0, 0, 1};

    double azimuth_deg() const {
        double a = rad2deg(std::atan2(direction[1], direction[0]));
        return a < 0 ? a + 360.0 : a;
    }
    double elevation_deg() const { return rad2deg(std::asin(direction[2])); }

    static LightVector from_angles(double azimuth_deg, double elevation_deg) {
        double az = deg2rad(azimuth_deg), el = deg2rad(elevation_deg);
        return {cv::Vec3d(std::cos(az) * std::cos(el),
                          std::sin(az) * std::cos(el), std::sin(el))};
    }
};

struct LightSet {
    std::vector<LightVector> lights;
    std::vector<PolySurface> fits;
    double residual = 0.0;  // RMS of Eq-style reprojection residual
    bool converged = true;  // false when the cost stalled before tolerance
    std::vector<double> cost_history;  // per accepted iterate
};

namespace detail {

/// Median of the positive-intensity pool; used for the shadow threshold.
inline double image_median(const cv::Mat1f& img) {
    std::vector<float> v;
    v.reserve(static_cast<size_t>(img.rows) * img.cols);
    v.assign(img.begin(), img.end());
    auto mid = v.begin() + v.size() / 2;
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

}  // namespace detail

/// Least-squares fit of a 2D Legendre surface to the image, normalized to
/// unit grid mean. Pixels darker than shadow_frac of the image median are
/// excluded from the fit sums.
inline PolySurface fit_polynomial_surface(const cv::Mat1f& image, int degree,
                                          double shadow_frac = 0.02) {
    if (degree < 1 || degree > 4)
        throw input_error("polynomial degree must be in [1,4]");
    const int W = image.cols, H = image.rows;
    if (static_cast<long long>(W) * H < (degree + 1) * (degree + 1))
        throw input_error("image too small for requested degree");

    PolySurface fit;
    fit.degree = degree;
    fit.grid_width = W;
    fit.grid_height = H;
    for (int i = 0; i <= degree; ++i)
        for (int j = 0; j + i <= degree; ++j) fit.terms.emplace_back(i, j);
    const int nt = static_cast<int>(fit.terms.size());

    const double thresh = shadow_frac * detail::image_median(image);

    struct Acc {
        cv::Mat1d ata;
        cv::Mat1d atb;
    };
    std::vector<double> px(degree + 1), py(degree + 1);
    auto partials = parallel_row_partials<Acc>(H, [&](int r0, int r1) {
        Acc acc{cv::Mat1d::zeros(nt, nt), cv::Mat1d::zeros(nt, 1)};
        std::vector<double> basis(nt), bx(degree + 1), by(degree + 1);
        for (int y = r0; y < r1; ++y) {
            double yn = PolySurface::norm_coord(y, H);
            for (int d = 0; d <= degree; ++d) by[d] = legendre(d, yn);
            for (int x = 0; x < W; ++x) {
                double v = image(y, x);
                if (v <= thresh) continue;
                double xn = PolySurface::norm_coord(x, W);
                for (int d = 0; d <= degree; ++d) bx[d] = legendre(d, xn);
                for (int t = 0; t < nt; ++t)
                    basis[t] = bx[fit.terms[t].first] * by[fit.terms[t].second];
                for (int a = 0; a < nt; ++a) {
                    for (int b = a; b < nt; ++b)
                        acc.ata(a, b) += basis[a] * basis[b];
                    acc.atb(a, 0) += basis[a] * v;
                }
            }
        }
        return acc;
    });
    cv::Mat1d ata = cv::Mat1d::zeros(nt, nt), atb = cv::Mat1d::zeros(nt, 1);
    for (const auto& p : partials) {
        ata += p.ata;
        atb += p.atb;
    }
    for (int a = 0; a < nt; ++a)
        for (int b = 0; b < a; ++b) ata(a, b) = ata(b, a);

    cv::SVD svd(ata);
    double smax = svd.w.at<double>(0);
    double smin = svd.w.at<double>(nt - 1);
    if (!(smax > 0) || smin / smax < 1e-12)
        throw numeric_error("degenerate fit");
    cv::Mat1d coef;
    svd.backSubst(atb, coef);
    fit.coefficients.assign(coef.begin(), coef.end());

    // normalize to unit grid mean
    cv::Mat1f grid = fit.render();
    double mean = cv::mean(grid)[0];
    if (!(mean > 1e-12)) throw numeric_error("degenerate fit");
    for (auto& c : fit.coefficients) c /= mean;
    fit.mean_value = mean;
    return fit;
}

struct AzimuthOptions {
    int spokes = 360;
    double radial_step_px = 1.0;
};

/// Azimuth of the illumination from the drop-off surface: the fit is sampled
/// on radial spokes from the image center and the brightest spoke wins, with
/// quadratic interpolation over its neighbors. Degrees in [0,360), measured
/// from +x toward +y.
inline double estimate_azimuth(const PolySurface& fit,
                               const AzimuthOptions& opt = {}) {
    const int R = opt.spokes;
    const double cx = 0.5 * (fit.grid_width - 1);
    const double cy = 0.5 * (fit.grid_height - 1);
    const double rmax = 0.95 * 0.5 * std::min(fit.grid_width, fit.grid_height);

    std::vector<double> spoke_mean(R, 0.0);
    for (int k = 0; k < R; ++k) {
        double ang = 2.0 * std::numbers::pi * k / R;
        double dx = std::cos(ang), dy = std::sin(ang);
        double sum = 0.0;
        int cnt = 0;
        for (double t = 1.0; t <= rmax; t += opt.radial_step_px) {
            sum += fit.eval_pixel(cx + t * dx, cy + t * dy);
            ++cnt;
        }
        spoke_mean[k] = cnt ? sum / cnt : 0.0;
    }

    auto mm = std::minmax_element(spoke_mean.begin(), spoke_mean.end());
    double spread = *mm.second - *mm.first;
    if (spread < 1e-6 * std::max(1e-12, std::abs(*mm.second)))
        throw numeric_error("azimuth undefined");

    int k = static_cast<int>(mm.second - spoke_mean.begin());
    double fm = spoke_mean[(k + R - 1) % R];
    double f0 = spoke_mean[k];
    double fp = spoke_mean[(k + 1) % R];
    double denom = fm - 2.0 * f0 + fp;
    double delta = std::abs(denom) > 1e-15 ? 0.5 * (fm - fp) / denom : 0.0;
    delta = std::clamp(delta, -0.5, 0.5);
    double theta = 360.0 * (k + delta) / R;
    if (theta < 0) theta += 360.0;
    if (theta >= 360.0) theta -= 360.0;
    return theta;
}

/// Divides the image by the normalized fit, then rescales so the grid mean
/// matches the input exactly.
inline cv::Mat1f flat_field(const cv::Mat1f& image, const PolySurface& fit) {
    cv::Mat1f model = fit.render();
    double minv, maxv;
    cv::minMaxLoc(model, &minv, &maxv);
    if (minv <= 1e-4) throw numeric_error("non-positive illumination model");
    cv::Mat1f out(image.size());
    for (int y = 0; y < image.rows; ++y)
        for (int x = 0; x < image.cols; ++x)
            out(y, x) = image(y, x) / model(y, x);
    double in_mean = cv::mean(image)[0];
    double out_mean = cv::mean(out)[0];
    if (out_mean > 0) out *= static_cast<float>(in_mean / out_mean);
    return out;
}

namespace detail {

/// Renders the drop-off a point light at elevation `elev_rad`, azimuth
/// `az_rad`, and distance `dist` (in units of half the smaller grid
/// dimension) would produce on a flat Lambertian plane, on a small grid
/// with the same aspect ratio as the original fit.
inline cv::Mat1f flat_plane_dropoff(int max_dim, double aspect, double az_rad,
                                    double elev_rad, double dist) {
    int W = max_dim, H = max_dim;
    if (aspect > 1.0)
        H = std::max(8, static_cast<int>(std::lround(max_dim / aspect)));
    else
        W = std::max(8, static_cast<int>(std::lround(max_dim * aspect)));
    cv::Mat1f img(H, W);
    const double cx = 0.5 * (W - 1), cy = 0.5 * (H - 1);
    const double half = 0.5 * std::min(W, H);
    const double ce = std::cos(elev_rad), se = std::sin(elev_rad);
    const double lx = cx + dist * half * ce * std::cos(az_rad);
    const double ly = cy + dist * half * ce * std::sin(az_rad);
    const double lz = dist * half * se;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double rx = lx - x, ry = ly - y;
            double r2 = rx * rx + ry * ry + lz * lz;
            // Lambertian shading times inverse-square falloff: cos(theta)/r^2
            img(y, x) = static_cast<float>(lz / (r2 * std::sqrt(r2)));
        }
    return img;
}

inline double fit_distance(const PolySurface& a, const PolySurface& b) {
    double c = 0.0;
    for (size_t t = 0; t < a.coefficients.size(); ++t) {
        double d = a.coefficients[t] - b.coefficients[t];
        c += d * d;
    }
    return c;
}

}  // namespace detail

/// Absolute elevation from the shape of the drop-off surface. The flat-plane
/// drop-off a light at candidate elevation and distance would cast is pushed
/// through the same polynomial fit as the data, and the candidate whose fit
/// coefficients match best wins; comparing in fit space cancels the smoothing
/// the low-degree model applies to both. Coarse grid search over elevation
/// and distance, then a local refinement pass. Degrees in (0, 90).
inline double estimate_elevation(const PolySurface& fit, double azimuth_deg,
                                 double min_elevation_deg = 5.0,
                                 double max_elevation_deg = 85.0) {
    const double aspect =
        static_cast<double>(fit.grid_width) / std::max(1, fit.grid_height);
    const double az = deg2rad(azimuth_deg);
    const int model_dim = 64;

    auto cost = [&](double elev_deg, double dist) {
        PolySurface mfit = fit_polynomial_surface(
            detail::flat_plane_dropoff(model_dim, aspect, az,
                                       deg2rad(elev_deg), dist),
            fit.degree);
        return detail::fit_distance(fit, mfit);
    };

    double best_e = 45.0, best_d = 2.0;
    double best_c = std::numeric_limits<double>::infinity();
    for (double e = min_elevation_deg; e <= max_elevation_deg; e += 2.5)
        for (double d = 0.6; d <= 40.0; d *= 1.2) {
            double c = cost(e, d);
            if (c < best_c) { best_c = c; best_e = e; best_d = d; }
        }
    double ce = best_e, cd = best_d;
    for (double e = std::max(min_elevation_deg, ce - 2.5);
         e <= std::min(max_elevation_deg, ce + 2.5); e += 0.25)
        for (double d = cd / 1.25; d <= cd * 1.25; d *= 1.045) {
            double c = cost(e, d);
            if (c < best_c) { best_c = c; best_e = e; best_d = d; }
        }
    return best_e;
}

struct RefineOptions {
    double init_elevation_deg = 60.0;
    /// Per-light initial elevations; when sized to the stack these override
    /// the scalar default. `calibrate` fills them from the drop-off fits.
    std::vector<double> init_elevations_deg;
    double min_elevation_deg = 5.0;
    double max_elevation_deg = 85.0;
    double rel_tol = 1e-5;
    int max_iterations = 50;
    double shadow_frac = 0.02;
};

namespace detail {

/// Sufficient statistics for the per-light elevation cost
/// sum (u cos e + v sin e - I)^2 with u, v from the current normals.
struct LightStats {
    double suu = 0, svv = 0, suv = 0, sui = 0, svi = 0, sii = 0;
    long long count = 0;
    double cost(double elev_rad) const {
        double c = std::cos(elev_rad), s = std::sin(elev_rad);
        return suu * c * c + svv * s * s + 2 * suv * c * s - 2 * sui * c -
               2 * svi * s + sii;
    }
};

inline double golden_min(const std::function<double(double)>& f, double lo,
                         double hi, double tol) {
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - invphi * (b - a), d = a + invphi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc < fd) {
            b = d; d = c; fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c; c = d; fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace detail

/// Alternating minimization of the reprojection cost: per-pixel least-squares
/// normals with lights held fixed, then a 1D elevation search per light along
/// its fixed azimuth. Lights stay on the unit sphere with z > 0.
inline LightSet refine_light_positions(const ImageStack& stack,
                                       const std::vector<double>& azimuths_deg,
                                       const RefineOptions& opt = {}) {
    const int n = stack.count();
    if (n < 3 || static_cast<int>(azimuths_deg.size()) != n)
        throw input_error("need >=3 lights with matching azimuths");
    const int W = stack.width(), H = stack.height();

    std::vector<double> elev(n, deg2rad(opt.init_elevation_deg));
    if (static_cast<int>(opt.init_elevations_deg.size()) == n)
        for (int i = 0; i < n; ++i) elev[i] = deg2rad(opt.init_elevations_deg[i]);
    std::vector<double> az(n);
    for (int i = 0; i < n; ++i) az[i] = deg2rad(azimuths_deg[i]);

    auto light_dir = [&](int i) {
        return cv::Vec3d(std::cos(az[i]) * std::cos(elev[i]),
                         std::sin(az[i]) * std::cos(elev[i]),
                         std::sin(elev[i]));
    };

    {
        cv::Mat1d L(n, 3);
        for (int i = 0; i < n; ++i) {
            cv::Vec3d d = light_dir(i);
            L(i, 0) = d[0]; L(i, 1) = d[1]; L(i, 2) = d[2];
        }
        cv::SVD svd(L);
        if (svd.w.at<double>(2) < 1e-6 * svd.w.at<double>(0))
            throw numeric_error("degenerate light geometry");
    }

    // shadow mask per light
    std::vector<double> shadow_thresh(n);
    for (int i = 0; i < n; ++i)
        shadow_thresh[i] = opt.shadow_frac * detail::image_median(stack.images[i]);

    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<double> best_elev = elev;
    double prev_cost = std::numeric_limits<double>::infinity();
    int stall = 0;
    bool converged = false;
    std::vector<double> history;

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        // (a) normals given lights, accumulating per-light stats on the fly
        cv::Matx33d lhs = cv::Matx33d::zeros();
        std::vector<cv::Vec3d> dirs(n);
        for (int i = 0; i < n; ++i) {
            dirs[i] = light_dir(i);
            lhs += dirs[i] * dirs[i].t();
        }
        cv::Matx33d lhs_inv = lhs.inv(cv::DECOMP_SVD);

        struct Block {
            std::vector<detail::LightStats> stats;
        };
        auto partials = parallel_row_partials<Block>(H, [&](int r0, int r1) {
            Block blk;
            blk.stats.resize(n);
            std::vector<float> I(n);
            for (int y = r0; y < r1; ++y) {
                for (int x = 0; x < W; ++x) {
                    bool all_lit = true;
                    for (int i = 0; i < n; ++i) {
                        I[i] = stack.images[i](y, x);
                        if (I[i] <= shadow_thresh[i]) all_lit = false;
                    }
                    cv::Vec3d nrm;
                    if (all_lit) {
                        cv::Vec3d rhs(0, 0, 0);
                        for (int i = 0; i < n; ++i) rhs += I[i] * dirs[i];
                        nrm = lhs_inv * rhs;
                    } else {
                        cv::Matx33d A = cv::Matx33d::zeros();
                        cv::Vec3d rhs(0, 0, 0);
                        int lit = 0;
                        for (int i = 0; i < n; ++i) {
                            if (I[i] <= shadow_thresh[i]) continue;
                            A += dirs[i] * dirs[i].t();
                            rhs += static_cast<double>(I[i]) * dirs[i];
                            ++lit;
                        }
                        if (lit < 3) continue;
                        nrm = A.inv(cv::DECOMP_SVD) * rhs;
                    }
                    for (int i = 0; i < n; ++i) {
                        if (I[i] <= shadow_thresh[i]) continue;
                        double u = nrm[0] * std::cos(az[i]) +
                                   nrm[1] * std::sin(az[i]);
                        double v = nrm[2];
                        auto& s = blk.stats[i];
                        s.suu += u * u;
                        s.svv += v * v;
                        s.suv += u * v;
                        s.sui += u * I[i];
                        s.svi += v * I[i];
                        s.sii += static_cast<double>(I[i]) * I[i];
                        s.count += 1;
                    }
                }
            }
            return blk;
        });
        std::vector<detail::LightStats> stats(n);
        for (const auto& blk : partials)
            for (int i = 0; i < n; ++i) {
                auto& a = stats[i];
                const auto& b = blk.stats[i];
                a.suu += b.suu; a.svv += b.svv; a.suv += b.suv;
                a.sui += b.sui; a.svi += b.svi; a.sii += b.sii;
                a.count += b.count;
            }

        // (b) per-light elevation update on the closed-form partial cost
        double cost = 0.0;
        long long total = 0;
        for (int i = 0; i < n; ++i) {
            double cur = stats[i].cost(elev[i]);
            double e = detail::golden_min(
                [&](double el) { return stats[i].cost(el); },
                deg2rad(opt.min_elevation_deg), deg2rad(opt.max_elevation_deg),
                deg2rad(0.01));
            if (stats[i].cost(e) < cur) {
                elev[i] = e;
                cur = stats[i].cost(e);
            }
            cost += std::max(0.0, cur);
            total += stats[i].count;
        }
        cost = total > 0 ? std::sqrt(cost / total) : 0.0;

        history.push_back(cost);
        if (cost < best_cost) {
            best_cost = cost;
            best_elev = elev;
        }
        if (std::isfinite(prev_cost)) {
            double delta = prev_cost - cost;
            if (std::abs(delta) <= opt.rel_tol * std::max(prev_cost, 1e-30)) {
                converged = true;
                break;
            }
            if (delta < 0) {
                if (++stall >= 3) break;
            } else {
                stall = 0;
            }
        }
        prev_cost = cost;
        if (iter == opt.max_iterations - 1) converged = true;
    }

    elev = best_elev;
    LightSet set;
    for (int i = 0; i < n; ++i)
        set.lights.push_back(LightVector::from_angles(rad2deg(az[i]), rad2deg(elev[i])));
    set.residual = best_cost;
    set.converged = converged;
    set.cost_history = std::move(history);
    return set;
}

/// Full calibration: fit drop-off per image, extract azimuths, seed each
/// elevation from the drop-off shape, flat-field, then refine elevations on
/// the flat-fielded stack. Returns the light set (with fits attached) and
/// the flat-fielded stack. The drop-off seeding matters: once flat-fielded,
/// the stack carries almost no absolute-elevation information (the cost is
/// nearly flat along a common rescaling of all elevations), so the refinement
/// polishes relative geometry around the seed rather than finding it.
inline std::pair<LightSet, ImageStack> calibrate(const ImageStack& stack,
                                                 int degree = 2,
                                                 const RefineOptions& opt = {}) {
    std::vector<double> azimuths;
    std::vector<PolySurface> fits;
    ImageStack flat;
    flat.pixel_pitch_um = stack.pixel_pitch_um;
    flat.color_reference = stack.color_reference;
    RefineOptions ropt = opt;
    const bool seed_from_dropoff =
        ropt.init_elevations_deg.size() != stack.images.size();
    if (seed_from_dropoff) ropt.init_elevations_deg.clear();
    for (const auto& img : stack.images) {
        PolySurface fit = fit_polynomial_surface(img, degree);
        azimuths.push_back(estimate_azimuth(fit));
        if (seed_from_dropoff)
            ropt.init_elevations_deg.push_back(
                estimate_elevation(fit, azimuths.back(), opt.min_elevation_deg,
                                   opt.max_elevation_deg));
        flat.images.push_back(flat_field(img, fit));
        fits.push_back(std::move(fit));
    }
    LightSet set = refine_light_positions(flat, azimuths, ropt);
    set.fits = std::move(fits);
    return {std::move(set), std::move(flat)};
}

}  // namespace relief
