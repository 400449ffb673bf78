#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "relief/common.hpp"
#include "relief/integration.hpp"
#include "relief/raster.hpp"

namespace relief {

enum class Source { Manual, Albedo, Depth, Union };

inline const char* to_string(Source s) {
    switch (s) {
        case Source::Manual: return "manual";
        case Source::Albedo: return "albedo";
        case Source::Depth: return "depth";
        default: return "union";
    }
}

struct ProtrusionRecord {
    int id = 0;
    double centroid_x = 0, centroid_y = 0;  // pixels
    int area_px = 0;
    double equivalent_width_um = 0;  // 2*sqrt(area/pi)*pitch
    double peak_height_um = 0;       // 0 when no depth available
    Source source = Source::Union;
    int region_label = 0;
};

struct DetectionParams {
    int threshold_window = 51;       // local median/MAD window, odd
    double threshold_sigmas = 3.0;   // s in median + s*MAD
    std::vector<double> ncc_sigmas_px = {2, 4, 8, 16};
    double ncc_min = 0.5;
    double min_prominence_um = 5.0;  // blob height gate
    double min_width_um = 20.0;
    double max_width_um = 600.0;
    int min_area_px = 4;
    int border_px = 8;  // guard band: windowed statistics and the flat-field
                        // polynomial are unreliable against the frame edge
};

struct ProtrusionSet {
    std::vector<ProtrusionRecord> records;
    DetectionParams provenance;
};

namespace detail {

/// Sliding-window local median and MAD on a 4096-bin two-level histogram.
/// Values are quantized over the image range; borders are mirrored.
inline void local_median_mad(const cv::Mat1f& img, int window, cv::Mat1f& med,
                             cv::Mat1f& mad) {
    const int W = img.cols, H = img.rows, r = window / 2;
    med.create(img.size());
    mad.create(img.size());
    double minv, maxv;
    cv::minMaxLoc(img, &minv, &maxv);
    const double range = maxv - minv;
    if (range < 1e-12) {
        med = img.clone();
        mad.setTo(0.0f);
        return;
    }
    constexpr int kBins = 4096;
    constexpr int kCoarse = 64;  // 64 fine bins per coarse bin
    const double scale = (kBins - 1) / range;

    cv::Mat1s bin(img.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            bin(y, x) = static_cast<short>((img(y, x) - minv) * scale + 0.5);

    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
        return i;
    };

    parallel_rows(H, [&](int r0, int r1) {
        std::vector<int> fine(kBins), coarse(kCoarse);
        for (int y = r0; y < r1; ++y) {
            std::fill(fine.begin(), fine.end(), 0);
            std::fill(coarse.begin(), coarse.end(), 0);
            // histogram of the window centered at x = 0
            for (int dy = -r; dy <= r; ++dy) {
                const short* row = bin[reflect(y + dy, H)];
                for (int dx = -r; dx <= r; ++dx) {
                    short b = row[reflect(dx, W)];
                    ++fine[b];
                    ++coarse[b / kCoarse];
                }
            }
            const int total = window * window;
            for (int x = 0; x < W; ++x) {
                if (x > 0) {  // slide: drop column x-1-r, add column x+r
                    int xdrop = reflect(x - 1 - r, W), xadd = reflect(x + r, W);
                    for (int dy = -r; dy <= r; ++dy) {
                        const short* row = bin[reflect(y + dy, H)];
                        short bd = row[xdrop], ba = row[xadd];
                        --fine[bd]; --coarse[bd / kCoarse];
                        ++fine[ba]; ++coarse[ba / kCoarse];
                    }
                }
                // median bin
                int half = (total + 1) / 2, acc = 0, cb = 0;
                while (acc + coarse[cb] < half) acc += coarse[cb++];
                int fb = cb * kCoarse;
                while (acc + fine[fb] < half) acc += fine[fb++];
                med(y, x) = static_cast<float>(minv + fb / scale);
                // MAD: smallest d with count in [fb-d, fb+d] >= half
                int inside = fine[fb], d = 0;
                while (inside < half && d < kBins) {
                    ++d;
                    if (fb - d >= 0) inside += fine[fb - d];
                    if (fb + d < kBins) inside += fine[fb + d];
                }
                mad(y, x) = static_cast<float>(d / scale);
            }
        }
    });
}

inline void clear_border(cv::Mat1b& mask, int border) {
    if (border <= 0) return;
    int b = std::min({border, mask.cols / 2, mask.rows / 2});
    mask.rowRange(0, b).setTo(0);
    mask.rowRange(mask.rows - b, mask.rows).setTo(0);
    mask.colRange(0, b).setTo(0);
    mask.colRange(mask.cols - b, mask.cols).setTo(0);
}

inline cv::Mat1f gaussian_spot(double sigma) {
    int r = std::max(2, static_cast<int>(std::ceil(3 * sigma)));
    cv::Mat1f t(2 * r + 1, 2 * r + 1);
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x)
            t(y + r, x + r) = static_cast<float>(
                std::exp(-(x * x + y * y) / (2 * sigma * sigma)));
    return t;
}

}  // namespace detail

/// Bright-spot evidence from the albedo: pixels above the local
/// median + s*MAD that also correlate with an isotropic Gaussian spot bank.
inline cv::Mat1b albedo_candidates(const cv::Mat1f& albedo,
                                   const DetectionParams& params = {}) {
    cv::Mat1f med, mad;
    detail::local_median_mad(albedo, params.threshold_window, med, mad);

    cv::Mat1b thresh_pass(albedo.size());
    for (int y = 0; y < albedo.rows; ++y)
        for (int x = 0; x < albedo.cols; ++x)
            thresh_pass(y, x) =
                albedo(y, x) >
                        med(y, x) + params.threshold_sigmas * mad(y, x) + 1e-7f
                    ? 255
                    : 0;

    cv::Mat1f best_ncc(albedo.size(), -1.0f);
    for (double sigma : params.ncc_sigmas_px) {
        cv::Mat1f tmpl = detail::gaussian_spot(sigma);
        int r = tmpl.rows / 2;
        cv::Mat1f padded;
        cv::copyMakeBorder(albedo, padded, r, r, r, r, cv::BORDER_REFLECT);
        cv::Mat1f ncc;
        cv::matchTemplate(padded, tmpl, ncc, cv::TM_CCOEFF_NORMED);
        for (int y = 0; y < albedo.rows; ++y)
            for (int x = 0; x < albedo.cols; ++x) {
                float v = ncc(y, x);
                if (std::isfinite(v) && v > best_ncc(y, x)) best_ncc(y, x) = v;
            }
    }

    cv::Mat1b mask(albedo.size());
    for (int y = 0; y < albedo.rows; ++y)
        for (int x = 0; x < albedo.cols; ++x)
            mask(y, x) =
                (thresh_pass(y, x) && best_ncc(y, x) > params.ncc_min) ? 255 : 0;
    detail::clear_border(mask, params.border_px);
    return mask;
}

/// Raised-relief evidence from the depth map: multi-scale scale-normalized
/// Laplacian-of-Gaussian maxima on +z, gated by an estimated height. For a
/// Gaussian bump of height h at the matching scale the normalized response is
/// h/2, hence the factor 2 calibration.
inline cv::Mat1b depth_candidates(const DepthMap& depth, double pitch_um,
                                  const DetectionParams& params = {}) {
    const int W = depth.z_um.cols, H = depth.z_um.rows;
    cv::Mat1f z;
    depth.z_um.convertTo(z, CV_32F);

    // blob radius sqrt(2)*sigma; widths [min,max] um -> sigma range in px
    double sig_lo = std::max(1.0, params.min_width_um / (2 * std::sqrt(2.0) * pitch_um));
    double sig_hi = std::max(sig_lo, params.max_width_um / (2 * std::sqrt(2.0) * pitch_um));
    std::vector<double> sigmas;
    for (double s = sig_lo; s <= sig_hi * 1.0001; s *= std::pow(2.0, 1.0 / 3.0))
        sigmas.push_back(s);

    std::vector<cv::Mat1f> response(sigmas.size());
    for (size_t i = 0; i < sigmas.size(); ++i) {
        double s = sigmas[i];
        cv::Mat1f blurred, lap;
        cv::GaussianBlur(z, blurred, cv::Size(0, 0), s, s, cv::BORDER_REFLECT);
        cv::Laplacian(blurred, lap, CV_32F, 1, 1.0, 0.0, cv::BORDER_REFLECT);
        response[i] = lap * static_cast<float>(-2.0 * s * s);  // est. height, um
    }

    cv::Mat1b mask(z.size(), uchar(0));
    for (size_t i = 0; i < sigmas.size(); ++i) {
        for (int y = 1; y + 1 < H; ++y) {
            for (int x = 1; x + 1 < W; ++x) {
                float v = response[i](y, x);
                if (v < params.min_prominence_um) continue;
                bool is_max = true;
                for (int dy = -1; dy <= 1 && is_max; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dy && !dx) continue;
                        if (response[i](y + dy, x + dx) > v) { is_max = false; break; }
                    }
                if (is_max && i > 0 && response[i - 1](y, x) > v) is_max = false;
                if (is_max && i + 1 < sigmas.size() && response[i + 1](y, x) > v)
                    is_max = false;
                if (!is_max) continue;
                int rad = std::max(1, static_cast<int>(std::lround(
                                          std::sqrt(2.0) * sigmas[i])));
                cv::circle(mask, {x, y}, rad, cv::Scalar(255), cv::FILLED);
            }
        }
    }
    detail::clear_border(mask, params.border_px);
    return mask;
}

namespace detail {

/// Peak height of one labeled component: max depth inside minus the median
/// depth on a thin ring just outside it.
inline double component_peak_um(const cv::Mat1d& z, const cv::Mat1i& labels,
                                int label, const cv::Rect& box) {
    cv::Rect roi = box;
    roi.x = std::max(0, roi.x - 3);
    roi.y = std::max(0, roi.y - 3);
    roi.width = std::min(z.cols - roi.x, box.width + 6);
    roi.height = std::min(z.rows - roi.y, box.height + 6);

    cv::Mat1b comp(roi.size(), uchar(0));
    double zmax = -1e300;
    for (int y = 0; y < roi.height; ++y)
        for (int x = 0; x < roi.width; ++x)
            if (labels(roi.y + y, roi.x + x) == label) {
                comp(y, x) = 255;
                zmax = std::max(zmax, z(roi.y + y, roi.x + x));
            }
    cv::Mat1b dil;
    cv::dilate(comp, dil, cv::Mat1b::ones(5, 5));
    std::vector<double> ring;
    for (int y = 0; y < roi.height; ++y)
        for (int x = 0; x < roi.width; ++x)
            if (dil(y, x) && !comp(y, x)) ring.push_back(z(roi.y + y, roi.x + x));
    if (ring.empty()) return 0.0;
    auto mid = ring.begin() + ring.size() / 2;
    std::nth_element(ring.begin(), mid, ring.end());
    return std::max(0.0, zmax - *mid);
}

inline ProtrusionSet label_components(const cv::Mat1b& mask,
                                      const cv::Mat1b& albedo_mask,
                                      const cv::Mat1b& depth_mask,
                                      const RegionPartition& partition,
                                      double pitch_um, const DepthMap* depth,
                                      Source default_source,
                                      const DetectionParams& params) {
    ProtrusionSet set;
    set.provenance = params;
    cv::Mat1i labels;
    cv::Mat stats, centroids;
    int ncomp = cv::connectedComponentsWithStats(mask, labels, stats, centroids,
                                                 8, CV_32S);
    int next_id = 1;
    for (int c = 1; c < ncomp; ++c) {
        int area = stats.at<int>(c, cv::CC_STAT_AREA);
        if (area < params.min_area_px) continue;
        cv::Rect box(stats.at<int>(c, cv::CC_STAT_LEFT),
                     stats.at<int>(c, cv::CC_STAT_TOP),
                     stats.at<int>(c, cv::CC_STAT_WIDTH),
                     stats.at<int>(c, cv::CC_STAT_HEIGHT));
        ProtrusionRecord rec;
        rec.centroid_x = centroids.at<double>(c, 0);
        rec.centroid_y = centroids.at<double>(c, 1);
        rec.area_px = area;
        rec.equivalent_width_um =
            2.0 * std::sqrt(area / std::numbers::pi) * pitch_um;
        // automated components outside the configured width band are
        // artifacts (e.g. low-frequency reconstruction domes); manual
        // annotations are kept as drawn
        if (default_source != Source::Manual &&
            (rec.equivalent_width_um < params.min_width_um ||
             rec.equivalent_width_um > params.max_width_um))
            continue;
        rec.id = next_id++;

        if (default_source == Source::Manual) {
            rec.source = Source::Manual;
        } else {
            bool in_albedo = false, in_depth = false;
            for (int y = box.y; y < box.y + box.height; ++y)
                for (int x = box.x; x < box.x + box.width; ++x)
                    if (labels(y, x) == c) {
                        in_albedo = in_albedo || albedo_mask(y, x);
                        in_depth = in_depth || depth_mask(y, x);
                    }
            rec.source = in_albedo && in_depth ? Source::Union
                         : in_albedo          ? Source::Albedo
                                              : Source::Depth;
        }
        if (depth)
            rec.peak_height_um =
                component_peak_um(depth->z_um, labels, c, box);
        if (!partition.labels.empty()) {
            int cx = std::clamp(static_cast<int>(std::lround(rec.centroid_x)),
                                0, labels.cols - 1);
            int cy = std::clamp(static_cast<int>(std::lround(rec.centroid_y)),
                                0, labels.rows - 1);
            rec.region_label = partition.labels(cy, cx);
        }
        set.records.push_back(rec);
    }
    return set;
}

}  // namespace detail

/// Union of the two evidence masks, 8-connected labeling, per-component
/// measurement with source tagging and centroid-based region assignment.
inline ProtrusionSet fuse_and_label(const cv::Mat1b& albedo_mask,
                                    const cv::Mat1b& depth_mask,
                                    const RegionPartition& partition,
                                    double pitch_um,
                                    const DepthMap* depth = nullptr,
                                    const DetectionParams& params = {}) {
    if (albedo_mask.size() != depth_mask.size())
        throw input_error("candidate masks are not co-registered");
    cv::Mat1b fused;
    cv::bitwise_or(albedo_mask, depth_mask, fused);
    return detail::label_components(fused, albedo_mask, depth_mask, partition,
                                    pitch_um, depth, Source::Union, params);
}

/// Connected components of an externally drawn binary mask, measured the
/// same way as automated detections.
inline ProtrusionSet ingest_manual(const cv::Mat1b& manual_mask,
                                   const RegionPartition& partition,
                                   double pitch_um,
                                   const DepthMap* depth = nullptr,
                                   const DetectionParams& params = {}) {
    if (!partition.labels.empty() && partition.labels.size() != manual_mask.size())
        throw input_error("manual mask dimension mismatch");
    cv::Mat1b none(manual_mask.size(), uchar(0));
    return detail::label_components(manual_mask, none, none, partition,
                                    pitch_um, depth, Source::Manual, params);
}

}  // namespace relief
