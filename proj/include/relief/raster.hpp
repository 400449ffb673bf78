#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "relief/common.hpp"

namespace relief {

// Rec. 709 luma weights, fixed for determinism.
inline constexpr double kLumaR = 0.2126;
inline constexpr double kLumaG = 0.7152;
inline constexpr double kLumaB = 0.0722;

/// Co-registered single-channel rasters, one per light, linear-light samples
/// nominally in [0,1].
struct ImageStack {
    std::vector<cv::Mat1f> images;
    double pixel_pitch_um = 0.0;
    cv::Mat3f color_reference;  // empty when absent

    int width() const { return images.empty() ? 0 : images[0].cols; }
    int height() const { return images.empty() ? 0 : images[0].rows; }
    int count() const { return static_cast<int>(images.size()); }
};

/// Per-pixel region labels: 0 = background, 1..K = color regions.
struct RegionPartition {
    cv::Mat1i labels;
    std::vector<std::string> region_names;  // size K

    int region_count() const { return static_cast<int>(region_names.size()); }
};

inline cv::Mat3f to_float_rgb(const cv::Mat& img) {
    cv::Mat f;
    double scale = 1.0;
    if (img.depth() == CV_8U) scale = 1.0 / 255.0;
    else if (img.depth() == CV_16U) scale = 1.0 / 65535.0;
    img.convertTo(f, CV_32F, scale);
    cv::Mat3f rgb;
    if (f.channels() == 1) {
        cv::cvtColor(f, rgb, cv::COLOR_GRAY2BGR);
    } else if (f.channels() == 3) {
        rgb = f;
    } else if (f.channels() == 4) {
        cv::cvtColor(f, rgb, cv::COLOR_BGRA2BGR);
    } else {
        throw input_error("unsupported channel count " +
                          std::to_string(f.channels()));
    }
    return rgb;
}

/// BGR (OpenCV order) to Rec. 709 luminance.
inline cv::Mat1f luminance(const cv::Mat3f& bgr) {
    cv::Mat1f out(bgr.size());
    for (int y = 0; y < bgr.rows; ++y) {
        const cv::Vec3f* src = bgr[y];
        float* dst = out[y];
        for (int x = 0; x < bgr.cols; ++x) {
            dst[x] = static_cast<float>(kLumaB * src[x][0] + kLumaG * src[x][1] +
                                        kLumaR * src[x][2]);
        }
    }
    return out;
}

/// Loads an 8/16-bit PNG/TIFF as a linear [0,1] luminance raster.
inline cv::Mat1f load_gray(const std::filesystem::path& path,
                           double gamma = 1.0) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw input_error("cannot read image: " + path.string());
    cv::Mat1f gray;
    if (img.channels() == 1) {
        double scale = 1.0;
        if (img.depth() == CV_8U) scale = 1.0 / 255.0;
        else if (img.depth() == CV_16U) scale = 1.0 / 65535.0;
        img.convertTo(gray, CV_32F, scale);
    } else {
        gray = luminance(to_float_rgb(img));
    }
    if (gamma != 1.0) {
        for (int y = 0; y < gray.rows; ++y)
            for (int x = 0; x < gray.cols; ++x)
                gray(y, x) = std::pow(std::max(0.0f, gray(y, x)),
                                      static_cast<float>(gamma));
    }
    for (int y = 0; y < gray.rows; ++y)
        for (int x = 0; x < gray.cols; ++x)
            if (!std::isfinite(gray(y, x)))
                throw input_error("non-finite sample in " + path.string());
    return gray;
}

/// Writes a [0,1] raster as 16-bit PNG/TIFF (clamping out-of-range samples).
inline void save_gray16(const cv::Mat1f& img,
                        const std::filesystem::path& path) {
    cv::Mat1w out(img.size());
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) {
            float v = std::min(1.0f, std::max(0.0f, img(y, x)));
            out(y, x) = static_cast<uint16_t>(std::lround(v * 65535.0));
        }
    if (!cv::imwrite(path.string(), out))
        throw input_error("cannot write image: " + path.string());
}

/// Manifest: JSON {"images": [...], "pixel_pitch_um": n, "gamma"?, "color_reference"?}
/// with paths resolved relative to the manifest location.
inline ImageStack load_stack(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw input_error("cannot open manifest: " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw input_error("bad manifest " + manifest_path.string() + ": " +
                          e.what());
    }
    if (!j.contains("images") || !j["images"].is_array())
        throw input_error("manifest missing 'images' array: " +
                          manifest_path.string());
    if (!j.contains("pixel_pitch_um"))
        throw input_error("manifest missing 'pixel_pitch_um': " +
                          manifest_path.string());

    ImageStack stack;
    stack.pixel_pitch_um = j["pixel_pitch_um"].get<double>();
    if (!(stack.pixel_pitch_um > 0))
        throw input_error("non-positive pixel_pitch_um in " +
                          manifest_path.string());
    const double gamma = j.value("gamma", 1.0);
    const auto base = manifest_path.parent_path();

    for (const auto& entry : j["images"]) {
        auto p = base / entry.get<std::string>();
        cv::Mat1f img = load_gray(p, gamma);
        if (!stack.images.empty() && img.size() != stack.images[0].size())
            throw input_error("dimension mismatch: " + p.string());
        stack.images.push_back(img);
    }
    if (stack.count() < 3)
        throw input_error("insufficient lights (need >=3), got " +
                          std::to_string(stack.count()));

    if (j.contains("color_reference")) {
        auto p = base / j["color_reference"].get<std::string>();
        cv::Mat img = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
        if (img.empty()) throw input_error("cannot read image: " + p.string());
        stack.color_reference = to_float_rgb(img);
        if (stack.color_reference.size() != stack.images[0].size())
            throw input_error("color_reference dimension mismatch: " + p.string());
    }
    return stack;
}

/// Loads a label mask; distinct nonzero values are relabeled to contiguous
/// 1..K in ascending order of the original value.
inline RegionPartition load_region_partition(
    const std::filesystem::path& path, const cv::Size& expected) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw input_error("cannot read mask: " + path.string());
    if (img.channels() != 1) {
        cv::Mat tmp;
        cv::cvtColor(img, tmp, img.channels() == 4 ? cv::COLOR_BGRA2GRAY
                                                   : cv::COLOR_BGR2GRAY);
        img = tmp;
    }
    if (img.size() != expected)
        throw input_error("mask dimension mismatch: " + path.string());
    cv::Mat1i raw;
    img.convertTo(raw, CV_32S);

    std::map<int, int> relabel;
    for (int y = 0; y < raw.rows; ++y)
        for (int x = 0; x < raw.cols; ++x)
            if (raw(y, x) != 0) relabel[raw(y, x)] = 0;
    if (relabel.empty())
        throw input_error("no foreground region in " + path.string());
    if (relabel.size() > 255)
        throw input_error("more than 255 labels in " + path.string());

    int next = 1;
    for (auto& [value, label] : relabel) label = next++;

    RegionPartition part;
    part.labels = cv::Mat1i(raw.size(), 0);
    for (int y = 0; y < raw.rows; ++y)
        for (int x = 0; x < raw.cols; ++x)
            if (raw(y, x) != 0) part.labels(y, x) = relabel[raw(y, x)];
    for (int k = 1; k < next; ++k)
        part.region_names.push_back("region_" + std::to_string(k));
    return part;
}

}  // namespace relief
