#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tml/data.hpp"
#include "tml/error.hpp"

namespace fs = std::filesystem;

namespace tml::data {

void write_png(const fs::path& file, const Image& image) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, file.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw DataError("cannot write " + file.string() + ": " + msg);
  }
}

Image read_png(const fs::path& file) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, file.c_str())) {
    throw DataError("cannot read image " + file.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image img(png.height, png.width);
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw DataError("cannot decode image " + file.string() + ": " + msg);
  }
  return img;
}

namespace {

enum class Format { png, ppm, unknown };

Format sniff(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() >= 8 && std::memcmp(magic, "\x89PNG\r\n\x1a\n", 8) == 0) return Format::png;
  if (in.gcount() >= 2 && magic[0] == 'P' && magic[1] == '6') return Format::ppm;
  return Format::unknown;
}

// Binary PPM (P6) with maxval 255.
Image read_ppm(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        t.push_back(c);
        break;
      }
    }
    while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    return t;
  };
  const std::string magic = token();
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw DataError("cannot decode image " + file.string() + ": malformed PPM header");
  }
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    throw DataError("cannot decode image " + file.string() + ": only 8-bit binary PPM is supported");
  }
  Image img(h, w);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw DataError("cannot decode image " + file.string() + ": truncated pixel data");
  }
  return img;
}

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  return entries;
}

}  // namespace

Image resize_bilinear(const Image& image, std::int64_t height, std::int64_t width) {
  if (image.height == height && image.width == width) return image;
  Image out(height, width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::int64_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::int64_t>(fy);
    const std::int64_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::int64_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::int64_t>(fx);
      const std::int64_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(top * (1 - wy) + bottom * wy));
      }
    }
  }
  return out;
}

void export_folder(const LabeledDataset& ds, const fs::path& root) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const fs::path file = root / ds.names[i];
    fs::create_directories(file.parent_path());
    write_png(file, ds.images[i]);
  }
}

LoadReport load_folder(const fs::path& root, int target_size) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  LoadReport report;
  auto& ds = report.dataset;
  for (const auto& class_dir : sorted_entries(root)) {
    if (!fs::is_directory(class_dir)) {
      report.skipped.push_back(class_dir.filename().string() + ": not a class directory");
      continue;
    }
    const int label = static_cast<int>(ds.class_names.size());
    bool any = false;
    for (const auto& file : sorted_entries(class_dir)) {
      const std::string name = class_dir.filename().string() + "/" + file.filename().string();
      if (!fs::is_regular_file(file)) {
        report.skipped.push_back(name + ": not a regular file");
        continue;
      }
      const Format f = sniff(file);
      if (f == Format::unknown) {
        report.skipped.push_back(name + ": not a PNG or PPM image");
        continue;
      }
      Image img = f == Format::png ? read_png(file) : read_ppm(file);
      if (target_size > 0) img = resize_bilinear(img, target_size, target_size);
      if (!ds.images.empty() && (img.height != ds.images.front().height || img.width != ds.images.front().width)) {
        throw DataError("image " + file.string() + " is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " but earlier images are " + std::to_string(ds.images.front().height) + "x" +
                        std::to_string(ds.images.front().width) + "; pass a target size to resize");
      }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(label);
      ds.names.push_back(name);
      any = true;
    }
    if (any) {
      ds.class_names.push_back(class_dir.filename().string());
    } else {
      report.skipped.push_back(class_dir.filename().string() + "/: no images, class ignored");
    }
  }
  if (ds.images.empty()) throw DataError("dataset root " + root.string() + " contains no images");
  return report;
}

}  // namespace tml::data
