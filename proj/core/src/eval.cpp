#include "sfit/eval.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>

#include "sfit/losses.hpp"

namespace sfit::eval {
namespace {

using models::Classifier;
using models::Generator;
using models::Mode;

constexpr int kBorder = 2;

struct Counter {
  std::vector<int> correct;
  void add(const std::vector<int>& pred, std::span<const int> labels) {
    for (std::size_t i = 0; i < pred.size(); ++i) correct[static_cast<std::size_t>(labels[i])] += pred[i] == labels[i];
  }
};

double ratio(long a, long b) { return b > 0 ? static_cast<double>(a) / static_cast<double>(b) : 0.0; }

std::vector<double> per_class(const Counter& c, const std::vector<int>& totals) {
  std::vector<double> out(totals.size());
  for (std::size_t k = 0; k < totals.size(); ++k) out[k] = ratio(c.correct[k], totals[k]);
  return out;
}

long sum(const std::vector<int>& v) {
  long s = 0;
  for (int x : v) s += x;
  return s;
}

std::uint8_t to_byte(float v) {
  const double b = std::round((static_cast<double>(v) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void finalize_gap(BranchReport& r) {
  r.gap = r.acc_target_on_target - r.acc_source_on_target;
  r.gap_closure.reset();
  if (r.gap > 0.01) r.gap_closure = (r.acc_source_on_generated - r.acc_source_on_target) / r.gap;
}

BranchReport evaluate_branches(const models::Checkpoint& source_ckpt, const models::Checkpoint& target_ckpt,
                               const models::Checkpoint* generator_ckpt, const data::ImageSet& test) {
  if (!test.labeled()) throw Error(Errc::UnlabeledData, "evaluate_branches needs a labeled test set");
  test.validate();
  auto source = Classifier::from_checkpoint(source_ckpt);
  auto target = Classifier::from_checkpoint(target_ckpt);
  std::optional<Generator> gen;
  if (generator_ckpt) gen = Generator::from_checkpoint(*generator_ckpt);

  const int classes = source.spec().num_classes;
  if (target.spec().num_classes != classes || test.num_classes > classes) {
    throw Error(Errc::ShapeMismatch, "classifier heads and test labels disagree on the class count");
  }
  BranchReport r;
  r.count = test.count();
  r.num_classes = classes;
  r.class_counts.assign(static_cast<std::size_t>(classes), 0);
  Counter st{r.class_counts}, tt{r.class_counts}, sg{r.class_counts};

  const auto n = static_cast<std::size_t>(test.count());
  const auto& labels = *test.labels;
  for (int y : labels) ++r.class_counts[static_cast<std::size_t>(y)];
  for (std::size_t start = 0; start < n; start += 256) {
    const std::size_t end = std::min(n, start + 256);
    const auto x = slice_rows(test.images, start, end);
    const std::span<const int> y(labels.data() + start, end - start);
    const auto src_pred = nn::argmax_rows(source.forward(x, Mode::Eval).probs);
    st.add(src_pred, y);
    tt.add(nn::argmax_rows(target.forward(x, Mode::Eval).probs), y);
    if (gen) {
      sg.add(nn::argmax_rows(source.forward(gen->forward(x, false), Mode::Eval).probs), y);
    } else {
      sg.add(src_pred, y);
    }
  }
  const long total = static_cast<long>(n);
  r.acc_source_on_target = ratio(sum(st.correct), total);
  r.acc_target_on_target = ratio(sum(tt.correct), total);
  r.acc_source_on_generated = ratio(sum(sg.correct), total);
  r.per_class_source_on_target = per_class(st, r.class_counts);
  r.per_class_target_on_target = per_class(tt, r.class_counts);
  r.per_class_source_on_generated = per_class(sg, r.class_counts);
  finalize_gap(r);
  return r;
}

std::string BranchReport::to_json() const {
  nlohmann::ordered_json j;
  j["count"] = count;
  j["num_classes"] = num_classes;
  j["acc_source_on_target"] = acc_source_on_target;
  j["acc_target_on_target"] = acc_target_on_target;
  j["acc_source_on_generated"] = acc_source_on_generated;
  j["gap"] = gap;
  j["gap_closure"] = gap_closure ? nlohmann::ordered_json(*gap_closure) : nlohmann::ordered_json(nullptr);
  j["class_counts"] = class_counts;
  j["per_class"] = {{"source_on_target", per_class_source_on_target},
                    {"target_on_target", per_class_target_on_target},
                    {"source_on_generated", per_class_source_on_generated}};
  return j.dump(2) + "\n";
}

std::string BranchReport::to_csv() const {
  std::string out = "class,acc\n";
  char buf[64];
  for (std::size_t k = 0; k < per_class_source_on_generated.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", k, per_class_source_on_generated[k]);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_png(const Raster& raster, const std::filesystem::path& path) {
  if (raster.rgb.size() != static_cast<std::size_t>(raster.width) * raster.height * 3 || raster.width <= 0 ||
      raster.height <= 0) {
    throw Error(Errc::SizeMismatch, "raster buffer does not match its dimensions");
  }
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(Errc::IoError, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(Errc::IoError, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(Errc::IoError, "libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width), static_cast<png_uint_32>(raster.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < raster.height; ++y) {
    png_write_row(png, raster.rgb.data() + static_cast<std::size_t>(y) * raster.width * 3);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Raster read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error(Errc::IoError, "cannot read PNG " + path.string());
  }
  image.format = PNG_FORMAT_RGB;
  Raster r;
  r.width = static_cast<int>(image.width);
  r.height = static_cast<int>(image.height);
  r.rgb.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, r.rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(Errc::IoError, "cannot decode PNG " + path.string());
  }
  return r;
}

Raster render_grid(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw Error(Errc::SizeMismatch, "image grid needs at least one row");
  const auto& first = rows.front();
  if (first.rank() != 4 || first.dim(0) == 0) throw Error(Errc::SizeMismatch, "grid rows must be non-empty N x C x H x W");
  const int n = first.dim(0), h = first.dim(2), w = first.dim(3);
  for (const auto& row : rows) {
    if (row.rank() != 4 || row.dim(0) != n || row.dim(2) != h || row.dim(3) != w) {
      throw Error(Errc::SizeMismatch, "grid rows differ: " + shape_string(first.shape()) + " vs " +
                                          shape_string(row.shape()));
    }
    if (row.dim(1) != 1 && row.dim(1) != 3) throw Error(Errc::SizeMismatch, "grid images need 1 or 3 channels");
  }
  Raster r;
  r.width = n * w + (n + 1) * kBorder;
  r.height = static_cast<int>(rows.size()) * h + (static_cast<int>(rows.size()) + 1) * kBorder;
  r.rgb.assign(static_cast<std::size_t>(r.width) * r.height * 3, 255);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    const auto& row = rows[ri];
    const int c = row.dim(1);
    for (int i = 0; i < n; ++i) {
      const float* img = row.data() + static_cast<std::size_t>(i) * c * plane;
      const int x0 = kBorder + i * (w + kBorder);
      const int y0 = kBorder + static_cast<int>(ri) * (h + kBorder);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          auto* px = r.rgb.data() + (static_cast<std::size_t>(y0 + y) * r.width + (x0 + x)) * 3;
          for (int ch = 0; ch < 3; ++ch) {
            px[ch] = to_byte(img[static_cast<std::size_t>(c == 1 ? 0 : ch) * plane + y * w + x]);
          }
        }
      }
    }
  }
  return r;
}

void export_grid(const std::vector<Tensor>& rows, const std::filesystem::path& path) {
  write_png(render_grid(rows), path);
}

// ---------------------------------------------------------------------------

std::array<std::uint8_t, 3> heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto channel = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255)); };
  // Red ramps over the first third, green over the second, blue over the last.
  return {channel(3 * t), channel(3 * t - 1), channel(3 * t - 2)};
}

HeatmapExport gram_heatmap(const Tensor& f_target, const Tensor& f_source, bool normalized, int zoom) {
  require_same_shape(f_target, f_source, "gram heatmap");
  if (f_target.rank() != 3) throw Error(Errc::ShapeMismatch, "heatmap needs single-image D x H x W feature maps");
  if (zoom <= 0) throw Error(Errc::InvalidConfig, "zoom must be positive");
  auto gt = losses::gram(f_target.cast<double>());
  auto gs = losses::gram(f_source.cast<double>());
  if (normalized) {
    gt = losses::normalize_rows(gt);
    gs = losses::normalize_rows(gs);
  }
  HeatmapExport h;
  h.dim = gt.dim;
  h.zoom = zoom;
  h.values.resize(gt.values.size());
  for (std::size_t i = 0; i < h.values.size(); ++i) h.values[i] = std::abs(gs.values[i] - gt.values[i]);
  h.min = *std::min_element(h.values.begin(), h.values.end());
  h.max = *std::max_element(h.values.begin(), h.values.end());

  const int side = h.dim * zoom;
  h.raster.width = h.raster.height = side;
  h.raster.rgb.resize(static_cast<std::size_t>(side) * side * 3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double v = h.values[static_cast<std::size_t>(y / zoom) * h.dim + x / zoom];
      const auto color = heat_color(h.max > 0 ? v / h.max : 0.0);
      std::copy(color.begin(), color.end(), h.raster.rgb.begin() + (static_cast<std::size_t>(y) * side + x) * 3);
    }
  }
  return h;
}

HeatmapExport export_gram_heatmap(const Tensor& f_target, const Tensor& f_source, bool normalized,
                                  const std::filesystem::path& path, int zoom) {
  auto h = gram_heatmap(f_target, f_source, normalized, zoom);
  write_png(h.raster, path);
  auto sidecar = path;
  sidecar += ".txt";
  std::ofstream out(sidecar);
  if (!out) throw Error(Errc::IoError, "cannot write " + sidecar.string());
  out.precision(9);
  out << "gram = " << (normalized ? "row-normalized" : "raw") << "\n"
      << "dim = " << h.dim << "\n"
      << "zoom = " << h.zoom << "\n"
      << "min = " << h.min << "\n"
      << "max = " << h.max << "\n"
      << "colormap = black-red-yellow-white, scaled by max\n";
  return h;
}

}  // namespace sfit::eval
