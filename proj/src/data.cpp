#include "xvt/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace xvt {

std::string label_state_name(LabelState s) {
  switch (s) {
    case LabelState::kNegative: return "neg";
    case LabelState::kUncertain: return "unc";
    case LabelState::kPositive: return "pos";
    case LabelState::kUnknown: return "unknown";
  }
  throw ContractError("invalid label state");
}

LabelState parse_label_state(const std::string& name) {
  if (name == "neg") return LabelState::kNegative;
  if (name == "unc") return LabelState::kUncertain;
  if (name == "pos") return LabelState::kPositive;
  if (name == "unknown") return LabelState::kUnknown;
  throw FormatError("unknown label state '" + name + "'");
}

std::vector<std::string> DatasetContainer::task_names() const {
  std::vector<std::string> names;
  for (const auto& row : manifest) {
    if (std::find(names.begin(), names.end(), row.task) == names.end()) names.push_back(row.task);
  }
  return names;
}

// ---- synthetic generator ----

double marker_pattern(const SynthTaskSpec& spec, int feature, int r, int c) {
  const double angle = M_PI * feature / spec.alphabet;
  const double u = (r + 0.5) / spec.marker_size - 0.5;
  const double v = (c + 0.5) / spec.marker_size - 0.5;
  const double phase = 2.0 * M_PI * spec.cycles * (u * std::sin(angle) + v * std::cos(angle));
  return spec.marker_base + spec.marker_amp * std::cos(phase);
}

SynthDataset synth_generate(const SynthTaskSpec& spec, const std::array<int, 3>& fold_counts,
                            std::uint64_t seed) {
  if (spec.marker_size > spec.image_size) {
    throw ConfigError("synth: marker size " + std::to_string(spec.marker_size) +
                      " exceeds image size " + std::to_string(spec.image_size));
  }
  if (spec.alphabet < 2) throw ConfigError("synth: alphabet must have at least 2 features");

  const int hw = spec.image_size;
  const std::int64_t total =
      static_cast<std::int64_t>(fold_counts[0]) + fold_counts[1] + fold_counts[2];

  SynthDataset out;
  out.container.channels = 1;
  out.container.height = hw;
  out.container.width = hw;
  out.container.count = static_cast<std::uint64_t>(total);
  out.container.payload.resize(static_cast<std::size_t>(total) * 2 * hw * hw);
  out.truth.resize(static_cast<std::size_t>(total));

  const int positions = spec.image_size - spec.marker_size + 1;
  for (std::int64_t id = 0; id < total; ++id) {
    Rng rng = Rng::derive(seed, {stream::kSample, static_cast<std::uint64_t>(id)});
    const int label = static_cast<int>(id % 2);
    const int f0 = rng.uniform_int(spec.alphabet);
    const int f1 =
        label ? f0 : (f0 + 1 + rng.uniform_int(spec.alphabet - 1)) % spec.alphabet;

    SynthTruth& truth = out.truth[static_cast<std::size_t>(id)];
    truth.label = label;
    truth.feature = {f0, f1};
    for (int v = 0; v < 2; ++v) {
      truth.row[static_cast<std::size_t>(v)] = rng.uniform_int(positions);
      truth.col[static_cast<std::size_t>(v)] = rng.uniform_int(positions);
    }
    for (int v = 0; v < 2; ++v) {
      float* img = out.container.view(static_cast<std::uint64_t>(id), v);
      if (spec.noise > 0) {
        for (int i = 0; i < hw * hw; ++i) img[i] = static_cast<float>(spec.noise * rng.gaussian());
      } else {
        std::fill(img, img + hw * hw, 0.0f);
      }
      const int r0 = truth.row[static_cast<std::size_t>(v)];
      const int c0 = truth.col[static_cast<std::size_t>(v)];
      const int feature = truth.feature[static_cast<std::size_t>(v)];
      for (int r = 0; r < spec.marker_size; ++r) {
        for (int c = 0; c < spec.marker_size; ++c) {
          img[(r0 + r) * hw + c0 + c] += static_cast<float>(marker_pattern(spec, feature, r, c));
        }
      }
    }

    int fold = 0;
    if (id >= fold_counts[0] + fold_counts[1]) {
      fold = 2;
    } else if (id >= fold_counts[0]) {
      fold = 1;
    }
    out.container.manifest.push_back(
        {id, "agree", label ? LabelState::kPositive : LabelState::kNegative, fold});
  }
  return out;
}

// ---- preprocessing ----

namespace {

void check_image(const Tensor<float>& image, const char* what) {
  if (image.rank() != 2) {
    throw DimensionError(std::string(what) + " expects a (H,W) image, got " +
                         shape_str(image.shape()));
  }
}

}  // namespace

Tensor<float> normalize_foreground(const Tensor<float>& image) {
  check_image(image, "normalize_foreground");
  double mean = 0;
  std::int64_t n = 0;
  for (float v : image.values()) {
    if (v != 0.0f) {
      mean += v;
      ++n;
    }
  }
  if (n < 2) throw DegenerateInputError("normalize_foreground: fewer than 2 foreground pixels");
  mean /= static_cast<double>(n);
  double var = 0;
  for (float v : image.values()) {
    if (v != 0.0f) {
      const double d = v - mean;
      var += d * d;
    }
  }
  var /= static_cast<double>(n);
  if (var == 0.0) throw DegenerateInputError("normalize_foreground: constant foreground");
  const double inv_std = 1.0 / std::sqrt(var);

  std::vector<float> out(image.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>((image.values()[i] - mean) * inv_std);
  }
  return Tensor<float>(image.shape(), std::move(out));
}

Tensor<float> crop_threshold(const Tensor<float>& image, int win_h, int win_w, double threshold) {
  check_image(image, "crop_threshold");
  const int h = image.dim(0), w = image.dim(1);
  if (win_h > h || win_w > w || win_h < 1 || win_w < 1) {
    throw ConfigError("crop_threshold: window " + std::to_string(win_h) + "x" +
                      std::to_string(win_w) + " does not fit image " + shape_str(image.shape()));
  }
  // prefix sums of the above-threshold mass
  std::vector<double> prefix(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const float v = image.at(r, c);
      const double mass = v > threshold ? v : 0.0;
      prefix[static_cast<std::size_t>(r + 1) * (w + 1) + c + 1] =
          mass + prefix[static_cast<std::size_t>(r) * (w + 1) + c + 1] +
          prefix[static_cast<std::size_t>(r + 1) * (w + 1) + c] -
          prefix[static_cast<std::size_t>(r) * (w + 1) + c];
    }
  }
  auto window_mass = [&](int r, int c) {
    return prefix[static_cast<std::size_t>(r + win_h) * (w + 1) + c + win_w] -
           prefix[static_cast<std::size_t>(r) * (w + 1) + c + win_w] -
           prefix[static_cast<std::size_t>(r + win_h) * (w + 1) + c] +
           prefix[static_cast<std::size_t>(r) * (w + 1) + c];
  };
  int best_r = 0, best_c = 0;
  double best = window_mass(0, 0);
  for (int r = 0; r <= h - win_h; ++r) {
    for (int c = 0; c <= w - win_w; ++c) {
      const double m = window_mass(r, c);
      if (m > best) {
        best = m;
        best_r = r;
        best_c = c;
      }
    }
  }
  std::vector<float> out(static_cast<std::size_t>(win_h) * win_w);
  for (int r = 0; r < win_h; ++r) {
    for (int c = 0; c < win_w; ++c) {
      out[static_cast<std::size_t>(r) * win_w + c] = image.at(best_r + r, best_c + c);
    }
  }
  return Tensor<float>({win_h, win_w}, std::move(out));
}

Tensor<float> flip_horizontal(const Tensor<float>& image) {
  check_image(image, "flip_horizontal");
  const int h = image.dim(0), w = image.dim(1);
  std::vector<float> out(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) out[static_cast<std::size_t>(r) * w + c] = image.at(r, w - 1 - c);
  }
  return Tensor<float>({h, w}, std::move(out));
}

namespace {

float bilinear(const Tensor<float>& img, double y, double x) {
  const int h = img.dim(0), w = img.dim(1);
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  auto px = [&](int r, int c) -> double {
    if (r < 0 || r >= h || c < 0 || c >= w) return 0.0;  // zero fill
    return img.at(r, c);
  };
  const double top = (1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1);
  const double bottom = (1.0 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

// Separable Gaussian blur with zero-padded borders, kernel radius 3 sigma.
void gaussian_blur(std::vector<double>& field, int h, int w, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= total;

  std::vector<double> tmp(field.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int cc = c + i;
        if (cc >= 0 && cc < w) {
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 field[static_cast<std::size_t>(r) * w + cc];
        }
      }
      tmp[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int rr = r + i;
        if (rr >= 0 && rr < h) {
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp[static_cast<std::size_t>(rr) * w + c];
        }
      }
      field[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
}

}  // namespace

Tensor<float> augment(const Tensor<float>& image, const AugmentParams& params, Rng& rng) {
  check_image(image, "augment");
  const int h = image.dim(0), w = image.dim(1);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;

  const bool flip = params.flip_prob > 0 && rng.bernoulli(params.flip_prob);
  const double theta = rng.uniform(-params.max_rotate_deg, params.max_rotate_deg) * M_PI / 180.0;
  const double s = rng.uniform(params.scale_lo, params.scale_hi);
  const double ty = rng.uniform(-params.max_shift_frac, params.max_shift_frac) * h;
  const double tx = rng.uniform(-params.max_shift_frac, params.max_shift_frac) * w;

  // inverse map: translate^-1, scale^-1, rotate^-1, flip^-1, all about center
  const double cos_t = std::cos(-theta), sin_t = std::sin(-theta);
  std::vector<float> warped(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double y = (r - ty - cy) / s;
      double x = (c - tx - cx) / s;
      const double yr = cos_t * y - sin_t * x;
      const double xr = sin_t * y + cos_t * x;
      y = yr + cy;
      x = xr + cx;
      if (flip) x = 2.0 * cx - x;
      warped[static_cast<std::size_t>(r) * w + c] = bilinear(image, y, x);
    }
  }
  Tensor<float> affine({h, w}, std::move(warped));
  if (params.elastic_alpha == 0.0) return affine;

  std::vector<double> dy(static_cast<std::size_t>(h) * w), dx(dy.size());
  for (auto& v : dy) v = rng.uniform(-1.0, 1.0);
  for (auto& v : dx) v = rng.uniform(-1.0, 1.0);
  gaussian_blur(dy, h, w, params.elastic_sigma);
  gaussian_blur(dx, h, w, params.elastic_sigma);

  std::vector<float> out(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      out[i] = bilinear(affine, r + params.elastic_alpha * dy[i],
                        c + params.elastic_alpha * dx[i]);
    }
  }
  return Tensor<float>({h, w}, std::move(out));
}

// ---- on-disk container ----

namespace {

constexpr char kMagic[4] = {'X', 'V', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw FormatError("container truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::string& buf, std::size_t& pos) {
  if (pos + 8 > buf.size()) throw FormatError("container truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
  return v;
}

}  // namespace

std::string manifest_path(const std::string& container_path) {
  return container_path + ".manifest.csv";
}

void write_container(const DatasetContainer& data, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u64(buf, data.count);
  put_u32(buf, 2);
  put_u32(buf, static_cast<std::uint32_t>(data.channels));
  put_u32(buf, static_cast<std::uint32_t>(data.height));
  put_u32(buf, static_cast<std::uint32_t>(data.width));
  put_u32(buf, kDtypeF32);
  for (float f : data.payload) put_u32(buf, std::bit_cast<std::uint32_t>(f));

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw Error("write failed for '" + path + "'");
  os.close();

  std::ofstream ms(manifest_path(path), std::ios::trunc);
  if (!ms) throw Error("cannot open '" + manifest_path(path) + "' for writing");
  ms << "id,task,state,fold\n";
  for (const auto& row : data.manifest) {
    ms << row.id << ',' << row.task << ',' << label_state_name(row.state) << ',' << row.fold
       << '\n';
  }
  if (!ms) throw Error("write failed for '" + manifest_path(path) + "'");
}

DatasetContainer read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string buf = ss.str();

  std::size_t pos = 0;
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError("'" + path + "' is not a dataset container (bad magic)");
  }
  pos = 4;
  const std::uint32_t version = get_u32(buf, pos);
  if (version != kVersion) {
    throw FormatError("unsupported container version " + std::to_string(version));
  }
  DatasetContainer data;
  data.count = get_u64(buf, pos);
  const std::uint32_t views = get_u32(buf, pos);
  if (views != 2) throw FormatError("container must hold 2 views, got " + std::to_string(views));
  data.channels = static_cast<int>(get_u32(buf, pos));
  data.height = static_cast<int>(get_u32(buf, pos));
  data.width = static_cast<int>(get_u32(buf, pos));
  const std::uint32_t dtype = get_u32(buf, pos);
  if (dtype != kDtypeF32) throw FormatError("unsupported dtype tag " + std::to_string(dtype));

  const std::uint64_t expected =
      data.count * 2ull * static_cast<std::uint64_t>(data.view_size());
  if (buf.size() - pos != expected * 4) {
    throw FormatError("container payload is " + std::to_string(buf.size() - pos) +
                      " bytes, expected " + std::to_string(expected * 4));
  }
  data.payload.resize(expected);
  for (std::uint64_t i = 0; i < expected; ++i) {
    data.payload[i] = std::bit_cast<float>(get_u32(buf, pos));
  }

  std::ifstream ms(manifest_path(path));
  if (!ms) throw Error("cannot open '" + manifest_path(path) + "'");
  std::string line;
  if (!std::getline(ms, line) || line != "id,task,state,fold") {
    throw FormatError("manifest header mismatch in '" + manifest_path(path) + "'");
  }
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string id_s, task, state_s, fold_s;
    if (!std::getline(ls, id_s, ',') || !std::getline(ls, task, ',') ||
        !std::getline(ls, state_s, ',') || !std::getline(ls, fold_s)) {
      throw FormatError("malformed manifest row: " + line);
    }
    ManifestRow row{std::stoll(id_s), task, parse_label_state(state_s), std::stoi(fold_s)};
    if (row.id < 0 || row.id >= static_cast<std::int64_t>(data.count)) {
      throw FormatError("manifest id " + id_s + " out of range");
    }
    data.manifest.push_back(std::move(row));
  }
  const std::size_t tasks = data.task_names().size();
  if (data.manifest.size() != data.count * std::max<std::size_t>(tasks, 1)) {
    throw FormatError("manifest holds " + std::to_string(data.manifest.size()) +
                      " rows for " + std::to_string(data.count) + " samples");
  }
  return data;
}

}  // namespace xvt
