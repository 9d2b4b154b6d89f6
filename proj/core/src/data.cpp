#include "sfit/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "sfit/rng.hpp"

namespace sfit::data {
namespace fs = std::filesystem;

void ImageSet::validate() const {
  if (images.rank() != 4) throw Error(Errc::ShapeMismatch, "image set must be rank 4, got " + shape_string(images.shape()));
  if (channels() != 1 && channels() != 3) {
    throw Error(Errc::IncompatibleChannels, "image sets have 1 or 3 channels, got " + std::to_string(channels()));
  }
  if (labels) {
    if (static_cast<int>(labels->size()) != count()) {
      throw Error(Errc::CountMismatch, std::to_string(count()) + " images vs " + std::to_string(labels->size()) + " labels");
    }
    for (int y : *labels) {
      if (y < 0 || y >= num_classes) throw Error(Errc::IndexOutOfRange, "label " + std::to_string(y));
    }
  }
}

ImageSet subset(const ImageSet& set, std::span<const std::size_t> indices) {
  ImageSet out;
  out.num_classes = set.num_classes;
  out.images = gather_rows(set.images, indices);
  if (set.labels) {
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (auto i : indices) labels.push_back((*set.labels)[i]);
    out.labels = std::move(labels);
  }
  return out;
}

// ---------------------------------------------------------------------------

float byte_to_unit(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

std::uint8_t unit_to_byte(float v) {
  const float scaled = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(scaled);
}

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const fs::path& path) {
  if (offset + 4 > buf.size()) throw Error(Errc::TruncatedFile, path.string() + " ends inside the header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                  static_cast<char>(v)};
  out.write(bytes.data(), 4);
}

}  // namespace

ImageSet load_idx(const fs::path& images_path, const std::optional<fs::path>& labels_path) {
  const auto buf = read_file(images_path);
  const auto magic = read_be32(buf, 0, images_path);
  if (magic != kIdxImageMagic) {
    std::ostringstream msg;
    msg << images_path.string() << " has magic 0x" << std::hex << magic << ", expected 0x803";
    throw Error(Errc::BadMagic, msg.str());
  }
  const auto n = read_be32(buf, 4, images_path);
  const auto h = read_be32(buf, 8, images_path);
  const auto w = read_be32(buf, 12, images_path);
  const std::size_t payload = std::size_t{n} * h * w;
  if (buf.size() < 16 + payload) {
    throw Error(Errc::TruncatedFile, images_path.string() + " holds " + std::to_string(buf.size() - 16) +
                                         " pixel bytes, header promises " + std::to_string(payload));
  }
  ImageSet set;
  set.images = Tensor({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
  std::transform(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(payload), set.images.data(),
                 byte_to_unit);

  if (labels_path) {
    const auto lbuf = read_file(*labels_path);
    const auto lmagic = read_be32(lbuf, 0, *labels_path);
    if (lmagic != kIdxLabelMagic) {
      std::ostringstream msg;
      msg << labels_path->string() << " has magic 0x" << std::hex << lmagic << ", expected 0x801";
      throw Error(Errc::BadMagic, msg.str());
    }
    const auto ln = read_be32(lbuf, 4, *labels_path);
    if (ln != n) {
      throw Error(Errc::CountMismatch, std::to_string(n) + " images vs " + std::to_string(ln) + " labels");
    }
    if (lbuf.size() < 8 + std::size_t{ln}) throw Error(Errc::TruncatedFile, labels_path->string());
    set.labels = std::vector<int>(lbuf.begin() + 8, lbuf.begin() + 8 + ln);
    int max_label = 0;
    for (int y : *set.labels) max_label = std::max(max_label, y);
    set.num_classes = std::max(10, max_label + 1);
  }
  return set;
}

void save_idx(const ImageSet& set, const fs::path& images_path, const std::optional<fs::path>& labels_path) {
  if (set.channels() != 1) throw Error(Errc::IncompatibleChannels, "IDX images are single-channel");
  {
    std::ofstream out(images_path, std::ios::binary);
    if (!out) throw Error(Errc::IoError, "cannot write " + images_path.string());
    put_be32(out, kIdxImageMagic);
    put_be32(out, static_cast<std::uint32_t>(set.count()));
    put_be32(out, static_cast<std::uint32_t>(set.height()));
    put_be32(out, static_cast<std::uint32_t>(set.width()));
    std::vector<char> bytes(set.images.size());
    std::transform(set.images.data(), set.images.data() + set.images.size(), bytes.begin(),
                   [](float v) { return static_cast<char>(unit_to_byte(v)); });
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (labels_path) {
    if (!set.labels) throw Error(Errc::UnlabeledData, "no labels to write to " + labels_path->string());
    std::ofstream out(*labels_path, std::ios::binary);
    if (!out) throw Error(Errc::IoError, "cannot write " + labels_path->string());
    put_be32(out, kIdxLabelMagic);
    put_be32(out, static_cast<std::uint32_t>(set.labels->size()));
    for (int y : *set.labels) out.put(static_cast<char>(y));
  }
}

ImageSet resize_bilinear(const ImageSet& set, int height, int width) {
  const int n = set.count(), c = set.channels(), h = set.height(), w = set.width();
  ImageSet out;
  out.labels = set.labels;
  out.num_classes = set.num_classes;
  out.images = Tensor({n, c, height, width});
  const double sy = static_cast<double>(h) / height, sx = static_cast<double>(w) / width;
  for (int i = 0; i < n * c; ++i) {
    const float* src = set.images.data() + static_cast<std::size_t>(i) * h * w;
    float* dst = out.images.data() + static_cast<std::size_t>(i) * height * width;
    for (int y = 0; y < height; ++y) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
      const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
      const double ay = fy - y0;
      for (int x = 0; x < width; ++x) {
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
        const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
        const double ax = fx - x0;
        const double top = src[y0 * w + x0] * (1 - ax) + src[y0 * w + x1] * ax;
        const double bottom = src[y1 * w + x0] * (1 - ax) + src[y1 * w + x1] * ax;
        dst[y * width + x] = static_cast<float>(top * (1 - ay) + bottom * ay);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::Identity: return "identity";
    case TransformKind::Invert: return "invert";
    case TransformKind::ChannelPermute: return "channel-permute";
    case TransformKind::Colorize: return "colorize";
    case TransformKind::SaturationScale: return "saturation-scale";
    case TransformKind::BackgroundShift: return "background-shift";
  }
  return "?";
}

TransformKind transform_kind_from_string(const std::string& name) {
  for (auto k : {TransformKind::Identity, TransformKind::Invert, TransformKind::ChannelPermute,
                 TransformKind::Colorize, TransformKind::SaturationScale, TransformKind::BackgroundShift}) {
    if (to_string(k) == name) return k;
  }
  throw Error(Errc::InvalidConfig, "unknown transform '" + name + "'");
}

ImageSet apply_transform(const ImageSet& set, const DomainTransform& t) {
  const int n = set.count(), c = set.channels();
  const std::size_t plane = static_cast<std::size_t>(set.height()) * set.width();
  ImageSet out;
  out.labels = set.labels;
  out.num_classes = set.num_classes;

  switch (t.kind) {
    case TransformKind::Identity:
      out.images = set.images;
      break;
    case TransformKind::Invert:
      out.images = set.images;
      for (auto& v : out.images.values()) v = -v;
      break;
    case TransformKind::ChannelPermute: {
      if (c != 3) throw Error(Errc::IncompatibleChannels, "channel-permute needs 3 channels, got " + std::to_string(c));
      auto perm = t.permutation;
      auto sorted = perm;
      std::sort(sorted.begin(), sorted.end());
      if (sorted != std::vector<int>{0, 1, 2}) throw Error(Errc::InvalidConfig, "channel permutation must permute {0,1,2}");
      out.images = Tensor(set.images.shape());
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < 3; ++ch) {
          const float* src = set.images.data() + (static_cast<std::size_t>(i) * 3 + perm[ch]) * plane;
          std::copy_n(src, plane, out.images.data() + (static_cast<std::size_t>(i) * 3 + ch) * plane);
        }
      }
      break;
    }
    case TransformKind::Colorize: {
      if (c != 1) throw Error(Errc::IncompatibleChannels, "colorize maps 1 channel to 3, got " + std::to_string(c));
      out.images = Tensor({n, 3, set.height(), set.width()});
      for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(t.seed, static_cast<std::uint64_t>(i)));
        std::array<float, 3> bg{}, fg{};
        // Resample until foreground and background are distinguishable.
        float contrast = 0;
        do {
          for (int ch = 0; ch < 3; ++ch) {
            bg[ch] = static_cast<float>(rng.uniform(-1.0, 1.0));
            fg[ch] = static_cast<float>(rng.uniform(-1.0, 1.0));
          }
          contrast = std::abs(fg[0] + fg[1] + fg[2] - bg[0] - bg[1] - bg[2]) / 3.0f;
        } while (contrast < 0.5f);
        const float* src = set.images.data() + static_cast<std::size_t>(i) * plane;
        for (int ch = 0; ch < 3; ++ch) {
          float* dst = out.images.data() + (static_cast<std::size_t>(i) * 3 + ch) * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            const float a = (src[p] + 1.0f) * 0.5f;
            dst[p] = bg[ch] * (1.0f - a) + fg[ch] * a;
          }
        }
      }
      break;
    }
    case TransformKind::SaturationScale: {
      if (c != 3) throw Error(Errc::IncompatibleChannels, "saturation-scale needs 3 channels, got " + std::to_string(c));
      out.images = Tensor(set.images.shape());
      for (int i = 0; i < n; ++i) {
        const float* src = set.images.data() + static_cast<std::size_t>(i) * 3 * plane;
        float* dst = out.images.data() + static_cast<std::size_t>(i) * 3 * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const float gray = (src[p] + src[plane + p] + src[2 * plane + p]) / 3.0f;
          for (int ch = 0; ch < 3; ++ch) {
            const float v = gray + static_cast<float>(t.amount) * (src[ch * plane + p] - gray);
            dst[ch * plane + p] = std::clamp(v, -1.0f, 1.0f);
          }
        }
      }
      break;
    }
    case TransformKind::BackgroundShift:
      out.images = set.images;
      for (auto& v : out.images.values()) {
        const float darkness = 1.0f - (v + 1.0f) * 0.5f;
        v = std::clamp(v + static_cast<float>(t.amount) * darkness, -1.0f, 1.0f);
      }
      break;
  }
  return out;
}

DomainPair make_domain_pair(const ImageSet& base, const DomainTransform& source_t, const DomainTransform& target_t,
                            std::uint64_t split_seed, double source_fraction) {
  if (!base.labeled()) throw Error(Errc::UnlabeledData, "domain pairs are split from a labeled base set");
  const auto n = static_cast<std::size_t>(base.count());
  if (n < 2) throw Error(Errc::EmptySplit, "base set has " + std::to_string(n) + " images");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(split_seed);
  rng.shuffle(order.begin(), order.end());
  auto n_source = static_cast<std::size_t>(std::llround(source_fraction * static_cast<double>(n)));
  n_source = std::clamp<std::size_t>(n_source, 1, n - 1);

  DomainPair pair;
  pair.source_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_source));
  pair.target_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_source), order.end());
  pair.source = apply_transform(subset(base, pair.source_indices), source_t);
  pair.target = apply_transform(subset(base, pair.target_indices), target_t);
  return pair;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan) {
  if (plan.batch_size <= 0) throw Error(Errc::InvalidConfig, "batch_size must be positive");
  const auto bs = static_cast<std::size_t>(plan.batch_size);
  if (bs > n) throw Error(Errc::BatchTooLarge, "batch_size " + std::to_string(bs) + " exceeds " + std::to_string(n) + " samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (plan.shuffle) {
    Rng rng(plan.seed);
    rng.shuffle(order.begin(), order.end());
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t end = std::min(n, start + bs);
    if (end - start < bs && plan.drop_last) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<ImageBatch> batches(const ImageSet& set, const BatchPlan& plan) {
  std::vector<ImageBatch> out;
  for (auto& idx : batch_indices(static_cast<std::size_t>(set.count()), plan)) {
    ImageBatch b;
    b.images = gather_rows(set.images, idx);
    if (set.labels) {
      for (auto i : idx) b.labels.push_back((*set.labels)[i]);
    }
    b.indices = std::move(idx);
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open manifest " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::InvalidConfig, path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string permutation_string(const std::vector<int>& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) s += (i ? "," : "") + std::to_string(p[i]);
  return s;
}

std::vector<int> parse_permutation(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

void write_manifest(const SyntheticManifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write manifest " + path.string());
  auto put_transform = [&](const char* prefix, const DomainTransform& t) {
    out << prefix << ".kind = " << to_string(t.kind) << "\n";
    out << prefix << ".amount = " << t.amount << "\n";
    out << prefix << ".seed = " << t.seed << "\n";
    out << prefix << ".permutation = " << permutation_string(t.permutation) << "\n";
  };
  out.precision(17);
  out << "# synthetic domain pair\n";
  out << "train_images = " << m.train_images.string() << "\n";
  out << "train_labels = " << m.train_labels.string() << "\n";
  out << "test_images = " << m.test_images.string() << "\n";
  out << "test_labels = " << m.test_labels.string() << "\n";
  put_transform("source", m.source_transform);
  put_transform("target", m.target_transform);
  out << "split_seed = " << m.split_seed << "\n";
  out << "train_per_domain = " << m.train_per_domain << "\n";
  out << "test_per_domain = " << m.test_per_domain << "\n";
  out << "resize = " << m.resize << "\n";
}

SyntheticManifest read_manifest(const fs::path& path) {
  auto kv = read_key_values(path);
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(Errc::InvalidConfig, "manifest " + path.string() + " lacks '" + key + "'");
    auto v = it->second;
    kv.erase(it);
    return v;
  };
  const auto base_dir = path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp : base_dir / fp;
  };
  auto take_transform = [&](const std::string& prefix) {
    DomainTransform t;
    t.kind = transform_kind_from_string(take(prefix + ".kind"));
    t.amount = std::stod(take(prefix + ".amount"));
    t.seed = std::stoull(take(prefix + ".seed"));
    t.permutation = parse_permutation(take(prefix + ".permutation"));
    return t;
  };
  SyntheticManifest m;
  m.train_images = resolve(take("train_images"));
  m.train_labels = resolve(take("train_labels"));
  m.test_images = resolve(take("test_images"));
  m.test_labels = resolve(take("test_labels"));
  m.source_transform = take_transform("source");
  m.target_transform = take_transform("target");
  m.split_seed = std::stoull(take("split_seed"));
  m.train_per_domain = std::stoi(take("train_per_domain"));
  m.test_per_domain = std::stoi(take("test_per_domain"));
  m.resize = std::stoi(take("resize"));
  if (!kv.empty()) throw Error(Errc::InvalidConfig, "manifest " + path.string() + " has unknown key '" + kv.begin()->first + "'");
  return m;
}

DomainSplits materialize(const SyntheticManifest& m) {
  auto load = [&](const fs::path& images, const fs::path& labels) {
    auto set = load_idx(images, labels);
    if (m.resize > 0 && (set.height() != m.resize || set.width() != m.resize)) {
      set = resize_bilinear(set, m.resize, m.resize);
    }
    return set;
  };
  auto take_first = [](const ImageSet& set, int n, const char* what) {
    if (n > set.count()) {
      throw Error(Errc::EmptySplit, std::string(what) + " needs " + std::to_string(n) + " images, half-split holds " +
                                        std::to_string(set.count()));
    }
    std::vector<std::size_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return subset(set, idx);
  };

  const auto train = load(m.train_images, m.train_labels);
  const auto test = load(m.test_images, m.test_labels);
  auto train_pair = make_domain_pair(train, m.source_transform, m.target_transform, m.split_seed);
  auto test_pair = make_domain_pair(test, m.source_transform, m.target_transform, mix_seed(m.split_seed, 1));

  DomainSplits s;
  s.source_train = take_first(train_pair.source, m.train_per_domain, "source train");
  s.target_train = take_first(train_pair.target, m.train_per_domain, "target train");
  s.source_test = take_first(test_pair.source, m.test_per_domain, "source test");
  s.target_test = take_first(test_pair.target, m.test_per_domain, "target test");
  return s;
}

}  // namespace sfit::data
