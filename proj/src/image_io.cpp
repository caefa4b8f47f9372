#include "tempoc/image_io.hpp"

#include "tempoc/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace fs = std::filesystem;

namespace tempoc::io {

namespace {

bool is_numeric_png(const fs::path& p)
{
    if (p.extension() != ".png")
        return false;
    const auto stem = p.stem().string();
    return !stem.empty() &&
           std::all_of(stem.begin(), stem.end(), [](unsigned char c) { return std::isdigit(c); });
}

png_image begin_read(const fs::path& path)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw ConfigError("cannot read PNG '" + path.string() + "': " + image.message);
    return image;
}

}  // namespace

torch::Tensor read_png(const fs::path& path)
{
    png_image image = begin_read(path);
    image.format = PNG_FORMAT_RGB;
    const int64_t width = image.width;
    const int64_t height = image.height;
    std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw ConfigError("cannot decode PNG '" + path.string() + "': " + msg);
    }

    auto hwc = torch::from_blob(buffer.data(), {height, width, 3}, torch::kUInt8);
    return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

void write_png(const fs::path& path, const torch::Tensor& pixels)
{
    TEMPOC_REQUIRE(pixels.dim() == 3 && pixels.size(0) == 3, "write_png expects [3, H, W]");

    // Round half up: floor(v * 255 + 0.5).
    auto bytes = (pixels.detach().to(torch::kCPU, torch::kFloat64).clamp(0.0, 1.0) * 255.0 + 0.5)
                     .floor()
                     .to(torch::kUInt8)
                     .permute({1, 2, 0})
                     .contiguous();

    if (path.has_parent_path())
        fs::create_directories(path.parent_path());

    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(pixels.size(2));
    image.height = static_cast<png_uint_32>(pixels.size(1));
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data_ptr<uint8_t>(), 0, nullptr))
        throw ConfigError("cannot write PNG '" + path.string() + "': " + image.message);
}

std::pair<int64_t, int64_t> png_dimensions(const fs::path& path)
{
    png_image image = begin_read(path);
    std::pair<int64_t, int64_t> dims{image.width, image.height};
    png_image_free(&image);
    return dims;
}

std::vector<fs::path> list_frames(const fs::path& dir)
{
    std::vector<fs::path> frames;
    if (!fs::is_directory(dir))
        return frames;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_numeric_png(entry.path()))
            frames.push_back(entry.path());
    std::sort(frames.begin(), frames.end(), [](const fs::path& a, const fs::path& b) {
        return std::stoull(a.stem().string()) < std::stoull(b.stem().string());
    });
    return frames;
}

VideoSequence load_video(const fs::path& dir, Role role)
{
    const auto files = list_frames(dir);
    if (files.empty())
        throw ConfigError("no numbered PNG frames in '" + dir.string() + "'");
    std::vector<torch::Tensor> frames;
    frames.reserve(files.size());
    for (const auto& f : files) {
        frames.push_back(read_png(f));
        if (frames.back().sizes() != frames.front().sizes())
            throw ConfigError("frame '" + f.string() + "' differs in size from the first frame");
    }
    return {torch::stack(frames), role};
}

void save_video(const fs::path& dir, const VideoSequence& video)
{
    fs::create_directories(dir);
    char name[32];
    for (int64_t t = 0; t < video.length(); ++t) {
        std::snprintf(name, sizeof(name), "%05lld.png", static_cast<long long>(t + 1));
        write_png(dir / name, video.tensor()[t]);
    }
}

}  // namespace tempoc::io
