#pragma once

#include <opencv2/core.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "relief/common.hpp"
#include "relief/detection.hpp"
#include "relief/raster.hpp"

namespace relief {

struct RegionStats {
    int region_label = 0;
    std::string region_name;
    double region_area_cm2 = 0;
    int count = 0;
    double count_per_cm2 = 0;
    std::vector<double> bin_edges_um;  // size bins+1, left-closed right-open
    std::vector<int> histogram;        // per width bin
};

/// Per-region protrusion counts, densities, and equivalent-width histograms.
/// Bins are uniform over [0, max width]; a width exactly on an edge falls in
/// the upper bin. Zero-area regions are skipped.
inline std::vector<RegionStats> compute_stats(const ProtrusionSet& set,
                                              const RegionPartition& partition,
                                              double pitch_um,
                                              double bin_width_um = 100.0) {
    if (!(bin_width_um > 0)) throw input_error("bin width must be positive");
    const int K = partition.region_count();
    std::vector<long long> region_px(K + 1, 0);
    for (int y = 0; y < partition.labels.rows; ++y)
        for (int x = 0; x < partition.labels.cols; ++x)
            ++region_px[partition.labels(y, x)];

    double max_width = 0;
    for (const auto& r : set.records)
        max_width = std::max(max_width, r.equivalent_width_um);
    int nbins = std::max(1, static_cast<int>(std::ceil(max_width / bin_width_um)));
    if (max_width > 0 &&
        std::fmod(max_width, bin_width_um) == 0.0)  // edge widths go up a bin
        ++nbins;

    const double px_area_cm2 = (pitch_um * 1e-4) * (pitch_um * 1e-4);
    std::vector<RegionStats> out;
    for (int k = 1; k <= K; ++k) {
        RegionStats rs;
        rs.region_label = k;
        rs.region_name = partition.region_names[k - 1];
        rs.region_area_cm2 = region_px[k] * px_area_cm2;
        if (!(rs.region_area_cm2 > 0)) continue;  // zero-area region skipped
        rs.histogram.assign(nbins, 0);
        for (int b = 0; b <= nbins; ++b)
            rs.bin_edges_um.push_back(b * bin_width_um);
        for (const auto& r : set.records) {
            if (r.region_label != k) continue;
            int b = static_cast<int>(r.equivalent_width_um / bin_width_um);
            b = std::clamp(b, 0, nbins - 1);
            ++rs.histogram[b];
            ++rs.count;
        }
        rs.count_per_cm2 = rs.count / rs.region_area_cm2;
        out.push_back(std::move(rs));
    }
    return out;
}

struct MethodComparisonRow {
    int region_label = 0;
    std::string region_name;
    double density_a = 0;
    double density_b = 0;
    double ratio = 0;  // b / a (0 when a is 0)
};

struct MethodComparison {
    std::vector<MethodComparisonRow> rows;
    double rank_correlation = 0;  // Spearman, over the density vectors
};

namespace detail {

inline std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < idx.size()) {  // average ranks over ties
        size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        double avg = 0.5 * (i + j) + 1.0;
        for (size_t t = i; t <= j; ++t) r[idx[t]] = avg;
        i = j + 1;
    }
    return r;
}

inline double spearman(const std::vector<double>& a,
                       const std::vector<double>& b) {
    auto ra = ranks(a), rb = ranks(b);
    double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
    double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da <= 0 || db <= 0) return 1.0;  // constant vectors agree trivially
    return num / std::sqrt(da * db);
}

}  // namespace detail

/// Region-by-region density comparison between two methods over the same
/// partition, with the Spearman rank correlation of the density vectors.
inline MethodComparison compare_methods(const std::vector<RegionStats>& a,
                                        const std::vector<RegionStats>& b) {
    if (a.size() != b.size()) throw input_error("partition mismatch");
    MethodComparison cmp;
    std::vector<double> da, db;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].region_label != b[i].region_label)
            throw input_error("partition mismatch");
        MethodComparisonRow row;
        row.region_label = a[i].region_label;
        row.region_name = a[i].region_name;
        row.density_a = a[i].count_per_cm2;
        row.density_b = b[i].count_per_cm2;
        row.ratio = row.density_a > 0 ? row.density_b / row.density_a : 0.0;
        cmp.rows.push_back(row);
        da.push_back(row.density_a);
        db.push_back(row.density_b);
    }
    if (!da.empty()) cmp.rank_correlation = detail::spearman(da, db);
    return cmp;
}

}  // namespace relief
