#include "celladapt/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "celladapt/errors.hpp"

namespace celladapt {

Image normalize_image(const Image& img) {
    Image out(img.height, img.width, 0.0f);
    if (img.data.empty()) return out;
    const auto [mn_it, mx_it] = std::minmax_element(img.data.begin(), img.data.end());
    const float mn = *mn_it, mx = *mx_it;
    if (mx == mn) return out; // constant image -> all zeros
    const float scale = 255.0f / (mx - mn);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        out.data[i] = (img.data[i] - mn) * scale;
    return out;
}

Image load_image_u8(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (m.empty())
        throw DataError("cannot read image: " + path);
    Image img(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const unsigned char* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < m.cols; ++x)
            img.at(y, x) = static_cast<float>(row[x]);
    }
    return img;
}

void save_image_u8(const Image& img, const std::string& path) {
    cv::Mat m(img.height, img.width, CV_8UC1);
    for (int y = 0; y < img.height; ++y) {
        unsigned char* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < img.width; ++x)
            row[x] = static_cast<unsigned char>(
                std::clamp(std::lround(img.at(y, x)), 0L, 255L));
    }
    if (!cv::imwrite(path, m))
        throw DataError("cannot write image: " + path);
}

} // namespace celladapt
