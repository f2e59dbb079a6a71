#include "anynet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace anynet {

namespace {

constexpr int kCifarSize = 32;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(detail::cat("cannot open '", path, "' for reading"));
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw DataError(detail::cat("failed reading '", path, "'"));
  return bytes;
}

}  // namespace

std::vector<int> LabelHierarchy::project(int fine) const {
  if (level_map.empty() || level_map[0].empty())
    throw UsageError("hierarchy has no classes");
  const int F = static_cast<int>(level_map[0].size());
  if (fine < 0 || fine >= F)
    throw DataError(detail::cat("fine label ", fine, " outside [0, ", F, ")"));
  std::vector<int> out(static_cast<std::size_t>(levels));
  for (int d = 0; d < levels; ++d) {
    const int id = level_map[static_cast<std::size_t>(d)][static_cast<std::size_t>(fine)];
    if (id < 0)
      throw DataError(detail::cat("fine label ", fine, " has no recorded level-", d + 1,
                                  " ancestor"));
    out[static_cast<std::size_t>(d)] = id;
  }
  return out;
}

void LabelHierarchy::validate() const {
  if (levels < 1) throw ConfigError("hierarchy needs at least one level");
  if (static_cast<int>(level_classes.size()) != levels ||
      static_cast<int>(level_map.size()) != levels)
    throw ConfigError("hierarchy level counts are inconsistent");
  const std::size_t F = level_map[0].size();
  for (std::size_t f = 0; f < F; ++f)
    if (level_map[0][f] != static_cast<int>(f))
      throw ConfigError("hierarchy level 1 must be the identity map");
  for (int d = 0; d < levels; ++d) {
    if (level_map[static_cast<std::size_t>(d)].size() != F)
      throw ConfigError(detail::cat("hierarchy level ", d + 1, " maps ",
                                    level_map[static_cast<std::size_t>(d)].size(),
                                    " classes, expected ", F));
    for (int id : level_map[static_cast<std::size_t>(d)])
      if (id < 0 || id >= level_classes[static_cast<std::size_t>(d)])
        throw ConfigError(detail::cat("hierarchy level ", d + 1,
                                      " has an id outside [0, ",
                                      level_classes[static_cast<std::size_t>(d)], ")"));
  }
}

Dataset load_cifar_binary(const std::vector<std::string>& paths, int variant) {
  if (variant != 10 && variant != 100)
    throw UsageError(detail::cat("variant must be 10 or 100, got ", variant));
  Dataset ds;
  ds.image_size = kCifarSize;
  ds.classes = variant;
  const std::size_t label_bytes = variant == 100 ? 2 : 1;
  const std::size_t record = label_bytes + kCifarPixels;
  std::vector<int> fine_to_coarse(variant == 100 ? 100 : 0, -1);

  for (const auto& path : paths) {
    const std::vector<unsigned char> bytes = read_file_bytes(path);
    if (bytes.size() % record != 0)
      throw FormatError(detail::cat("'", path, "': ", bytes.size(),
                                    " bytes is not a multiple of the ", record,
                                    "-byte record length"));
    const std::size_t count = bytes.size() / record;
    for (std::size_t r = 0; r < count; ++r) {
      const unsigned char* rec = bytes.data() + r * record;
      Sample s;
      if (variant == 100) {
        const int coarse = rec[0], fine = rec[1];
        if (fine >= 100)
          throw FormatError(detail::cat("'", path, "' record ", r, ": fine label ", fine,
                                        " outside [0, 100)"));
        if (coarse >= 20)
          throw FormatError(detail::cat("'", path, "' record ", r, ": coarse label ",
                                        coarse, " outside [0, 20)"));
        int& seen = fine_to_coarse[static_cast<std::size_t>(fine)];
        if (seen == -1)
          seen = coarse;
        else if (seen != coarse)
          throw FormatError(detail::cat("'", path, "' record ", r, ": fine label ", fine,
                                        " mapped to coarse ", coarse, " but earlier to ",
                                        seen));
        s.label = fine;
        s.level_labels = {fine, coarse};
      } else {
        const int label = rec[0];
        if (label >= 10)
          throw FormatError(detail::cat("'", path, "' record ", r, ": label ", label,
                                        " outside [0, 10)"));
        s.label = label;
      }
      s.image.resize(kCifarPixels);
      const unsigned char* px = rec + label_bytes;
      for (std::size_t i = 0; i < kCifarPixels; ++i)
        s.image[i] = static_cast<float>(px[i]) / 255.0f;
      ds.samples.push_back(std::move(s));
    }
  }

  if (variant == 100) {
    LabelHierarchy h;
    h.levels = 2;
    h.level_classes = {100, 20};
    h.level_map.resize(2);
    h.level_map[0].resize(100);
    for (int f = 0; f < 100; ++f) h.level_map[0][static_cast<std::size_t>(f)] = f;
    h.level_map[1] = fine_to_coarse;
    ds.hierarchy = std::move(h);
  }
  ds.stats = compute_channel_stats(ds);
  return ds;
}

Dataset load_cifar_binary(const std::string& path, int variant) {
  return load_cifar_binary(std::vector<std::string>{path}, variant);
}

void write_cifar_binary(const Dataset& ds, const std::string& path) {
  const bool two_byte = ds.hierarchy.levels > 1;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(detail::cat("cannot open '", path, "' for writing"));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    if (s.image.size() != kCifarPixels)
      throw UsageError(detail::cat("sample ", i, " has ", s.image.size(),
                                   " pixels; the CIFAR layout needs 3x32x32"));
    if (two_byte) {
      if (s.level_labels.size() < 2)
        throw UsageError(detail::cat("sample ", i,
                                     " lacks a coarse label for the two-byte layout"));
      out.put(static_cast<char>(s.level_labels[1]));
    }
    out.put(static_cast<char>(s.label));
    for (float v : s.image) {
      const int b = static_cast<int>(std::lround(static_cast<double>(v) * 255.0));
      out.put(static_cast<char>(std::clamp(b, 0, 255)));
    }
  }
  if (!out) throw DataError(detail::cat("failed writing '", path, "'"));
}

ChannelStats compute_channel_stats(const Dataset& ds) {
  ChannelStats st;
  if (ds.samples.empty()) return st;
  const std::size_t plane =
      static_cast<std::size_t>(ds.image_size) * static_cast<std::size_t>(ds.image_size);
  std::array<double, 3> sum{}, sumsq{};
  for (const Sample& s : ds.samples) {
    for (int c = 0; c < 3; ++c) {
      const float* p = s.image.data() + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum[static_cast<std::size_t>(c)] += p[i];
        sumsq[static_cast<std::size_t>(c)] += static_cast<double>(p[i]) * p[i];
      }
    }
  }
  const double n = static_cast<double>(ds.samples.size()) * static_cast<double>(plane);
  for (int c = 0; c < 3; ++c) {
    const double m = sum[static_cast<std::size_t>(c)] / n;
    const double var = std::max(0.0, sumsq[static_cast<std::size_t>(c)] / n - m * m);
    st.mean[static_cast<std::size_t>(c)] = m;
    const double sd = std::sqrt(var);
    // A constant channel carries no signal; keep the scale harmless.
    st.stddev[static_cast<std::size_t>(c)] = sd < 1e-12 ? 1.0 : sd;
  }
  return st;
}

void write_stats_sidecar(const ChannelStats& stats, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(detail::cat("cannot open '", path, "' for writing"));
  out << "channel mean stddev\n" << std::setprecision(17);
  for (int c = 0; c < 3; ++c)
    out << c << ' ' << stats.mean[static_cast<std::size_t>(c)] << ' '
        << stats.stddev[static_cast<std::size_t>(c)] << '\n';
  if (!out) throw DataError(detail::cat("failed writing '", path, "'"));
}

ChannelStats read_stats_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(detail::cat("cannot open '", path, "' for reading"));
  std::string header;
  std::getline(in, header);
  if (header != "channel mean stddev")
    throw FormatError(detail::cat("'", path, "': unexpected header '", header, "'"));
  ChannelStats st;
  for (int c = 0; c < 3; ++c) {
    int idx = -1;
    double m = 0, sd = 0;
    if (!(in >> idx >> m >> sd) || idx != c)
      throw FormatError(detail::cat("'", path, "': malformed line for channel ", c));
    st.mean[static_cast<std::size_t>(c)] = m;
    st.stddev[static_cast<std::size_t>(c)] = sd;
  }
  return st;
}

AugmentDraw draw_augment(Rng& rng, int pad) {
  AugmentDraw d;
  d.flip = std::bernoulli_distribution(0.5)(rng);
  std::uniform_int_distribution<int> off(0, 2 * pad);
  d.dx = off(rng);
  d.dy = off(rng);
  return d;
}

Sample augment(const Sample& s, int image_size, const AugmentDraw& draw,
               const ChannelStats& stats, int pad) {
  const std::size_t plane =
      static_cast<std::size_t>(image_size) * static_cast<std::size_t>(image_size);
  if (s.image.size() != 3 * plane)
    throw UsageError(detail::cat("sample has ", s.image.size(), " values, expected ",
                                 3 * plane));
  if (draw.dx < 0 || draw.dx > 2 * pad || draw.dy < 0 || draw.dy > 2 * pad)
    throw UsageError(detail::cat("crop offset (", draw.dx, ", ", draw.dy,
                                 ") outside [0, ", 2 * pad, "]"));
  Sample out;
  out.label = s.label;
  out.level_labels = s.level_labels;
  out.image.resize(s.image.size());
  for (int c = 0; c < 3; ++c) {
    const float mean = static_cast<float>(stats.mean[static_cast<std::size_t>(c)]);
    const float inv = 1.0f / static_cast<float>(stats.stddev[static_cast<std::size_t>(c)]);
    const float* src = s.image.data() + static_cast<std::size_t>(c) * plane;
    float* dst = out.image.data() + static_cast<std::size_t>(c) * plane;
    for (int y = 0; y < image_size; ++y) {
      for (int x = 0; x < image_size; ++x) {
        const int sy = y + draw.dy - pad;
        int sx = x + draw.dx - pad;
        float v = 0.0f;
        if (sy >= 0 && sy < image_size && sx >= 0 && sx < image_size) {
          if (draw.flip) sx = image_size - 1 - sx;
          v = src[static_cast<std::size_t>(sy) * image_size + sx];
        }
        dst[static_cast<std::size_t>(y) * image_size + x] = (v - mean) * inv;
      }
    }
  }
  return out;
}

Sample normalize_only(const Sample& s, const ChannelStats& stats) {
  Sample out;
  out.label = s.label;
  out.level_labels = s.level_labels;
  out.image.resize(s.image.size());
  const std::size_t plane = s.image.size() / 3;
  for (int c = 0; c < 3; ++c) {
    const float mean = static_cast<float>(stats.mean[static_cast<std::size_t>(c)]);
    const float inv = 1.0f / static_cast<float>(stats.stddev[static_cast<std::size_t>(c)]);
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t j = static_cast<std::size_t>(c) * plane + i;
      out.image[j] = (s.image[j] - mean) * inv;
    }
  }
  return out;
}

namespace {

struct ClassPattern {
  int cx = 0, cy = 0;
  std::array<double, 3> color{0.0, 0.0, 0.0};  // per-channel blob amplitude
  std::array<float, 3> tint{0.0f, 0.0f, 0.0f};
};

ClassPattern class_pattern(int c, int classes, int image_size, int coarse_groups) {
  ClassPattern p;
  // Distinct blob positions on a grid; channel cycles through RGB.
  int grid = 1;
  while (grid * grid < classes) ++grid;
  const int margin = image_size / 4;
  const int span = image_size - 2 * margin;
  const int step = grid > 1 ? span / (grid - 1) : 0;
  p.cx = margin + (c % grid) * step;
  p.cy = margin + (c / grid) * step;
  // Blob color: class c lights its primary channel; classes that wrap around
  // the RGB cycle light one (then two) further channels. Every class gets a
  // distinct color direction that survives global pooling, so even narrow
  // readouts separate classes without relying on absolute blob position.
  // (Classes beyond 8 repeat a color and differ by position alone.)
  const int primary = c % 3;
  const int extra = c / 3;
  for (int e = 0; e <= extra && e < 3; ++e)
    p.color[static_cast<std::size_t>((primary + e) % 3)] = 0.55;
  if (coarse_groups > 0) {
    const int g = c / (classes / coarse_groups);
    Rng grng(static_cast<std::uint64_t>(g) * 31337u + 7u);
    std::uniform_real_distribution<double> tint(0.05, 0.40);
    for (int ch = 0; ch < 3; ++ch)
      p.tint[static_cast<std::size_t>(ch)] = static_cast<float>(tint(grng));
  }
  return p;
}

}  // namespace

Dataset synth_dataset(std::uint64_t seed, int n, int classes, int image_size, double noise,
                      int coarse_groups) {
  if (classes < 2) throw UsageError(detail::cat("classes must be >= 2, got ", classes));
  if (n < classes)
    throw UsageError(detail::cat("n (", n, ") must be at least classes (", classes, ")"));
  if (image_size < 8)
    throw UsageError(detail::cat("image_size must be >= 8, got ", image_size));
  if (coarse_groups < 0 || (coarse_groups > 0 && classes % coarse_groups != 0))
    throw UsageError(detail::cat("coarse_groups (", coarse_groups,
                                 ") must divide classes (", classes, ")"));

  Dataset ds;
  ds.image_size = image_size;
  ds.classes = classes;
  const std::size_t plane =
      static_cast<std::size_t>(image_size) * static_cast<std::size_t>(image_size);
  const double sigma = static_cast<double>(image_size) / 8.0;

  std::vector<ClassPattern> patterns;
  patterns.reserve(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c)
    patterns.push_back(class_pattern(c, classes, image_size, coarse_groups));

  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const int c = i % classes;
    const ClassPattern& p = patterns[static_cast<std::size_t>(c)];
    Sample s;
    s.label = c;
    if (coarse_groups > 0) s.level_labels = {c, c / (classes / coarse_groups)};
    s.image.resize(3 * plane);
    for (int ch = 0; ch < 3; ++ch) {
      for (int y = 0; y < image_size; ++y) {
        for (int x = 0; x < image_size; ++x) {
          double v = p.tint[static_cast<std::size_t>(ch)];
          if (p.color[static_cast<std::size_t>(ch)] > 0.0) {
            const double dx = x - p.cx, dy = y - p.cy;
            v += p.color[static_cast<std::size_t>(ch)] *
                 std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          }
          if (noise > 0.0) v += noise * gauss(rng);
          s.image[static_cast<std::size_t>(ch) * plane +
                  static_cast<std::size_t>(y) * image_size + x] =
              static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    ds.samples.push_back(std::move(s));
  }

  if (coarse_groups > 0) {
    LabelHierarchy h;
    h.levels = 2;
    h.level_classes = {classes, coarse_groups};
    h.level_map.resize(2);
    h.level_map[0].resize(static_cast<std::size_t>(classes));
    h.level_map[1].resize(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) {
      h.level_map[0][static_cast<std::size_t>(c)] = c;
      h.level_map[1][static_cast<std::size_t>(c)] = c / (classes / coarse_groups);
    }
    ds.hierarchy = std::move(h);
  }
  ds.stats = compute_channel_stats(ds);
  return ds;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

LabelHierarchy load_taxonomy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(detail::cat("cannot open '", path, "' for reading"));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(trim(field));
    for (const auto& f : fields)
      if (f.empty())
        throw FormatError(detail::cat("'", path, "' line ", lineno, ": empty name"));
    if (!rows.empty() && fields.size() != rows.front().size())
      throw FormatError(detail::cat("'", path, "' line ", lineno, ": ", fields.size(),
                                    " columns, expected ", rows.front().size()));
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw FormatError(detail::cat("'", path, "': no classes"));

  const int D = static_cast<int>(rows.front().size());
  LabelHierarchy h;
  h.levels = D;
  h.level_classes.resize(static_cast<std::size_t>(D));
  h.level_map.resize(static_cast<std::size_t>(D));
  h.names.resize(static_cast<std::size_t>(D));
  for (int d = 0; d < D; ++d) {
    std::vector<int> ids;
    ids.reserve(rows.size());
    auto& interned = h.names[static_cast<std::size_t>(d)];
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::string& name = rows[r][static_cast<std::size_t>(d)];
      auto it = std::find(interned.begin(), interned.end(), name);
      int id;
      if (it == interned.end()) {
        id = static_cast<int>(interned.size());
        interned.push_back(name);
      } else {
        id = static_cast<int>(it - interned.begin());
        if (d == 0)
          throw FormatError(detail::cat("'", path, "': duplicate fine class '", name,
                                        "' (row ", r + 1, ")"));
      }
      ids.push_back(id);
    }
    h.level_classes[static_cast<std::size_t>(d)] = static_cast<int>(interned.size());
    h.level_map[static_cast<std::size_t>(d)] = std::move(ids);
  }
  h.validate();
  return h;
}

void attach_hierarchy(Dataset& ds, const LabelHierarchy& hierarchy) {
  hierarchy.validate();
  const int F = hierarchy.level_classes.front();
  if (ds.classes != F)
    throw ConfigError(detail::cat("dataset has ", ds.classes,
                                  " classes but the hierarchy lists ", F,
                                  " fine classes"));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    Sample& s = ds.samples[i];
    if (s.label < 0 || s.label >= F)
      throw DataError(detail::cat("sample ", i, " label ", s.label,
                                  " missing from the hierarchy (", F, " fine classes)"));
    s.level_labels = hierarchy.project(s.label);
  }
  ds.hierarchy = hierarchy;
}

template <typename S>
Tensor<S> make_batch(const Dataset& ds, const std::vector<int>& indices, bool augment_flag,
                     Rng& rng, const ChannelStats& stats) {
  if (indices.empty()) throw UsageError("cannot assemble an empty batch");
  const int n = static_cast<int>(indices.size());
  const int size = ds.image_size;
  const std::size_t per = 3 * static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
  std::vector<S> values(static_cast<std::size_t>(n) * per);
  for (int i = 0; i < n; ++i) {
    const int idx = indices[static_cast<std::size_t>(i)];
    if (idx < 0 || idx >= ds.size())
      throw UsageError(detail::cat("sample index ", idx, " outside [0, ", ds.size(), ")"));
    const Sample& raw = ds.samples[static_cast<std::size_t>(idx)];
    Sample prepared = augment_flag
                          ? augment(raw, size, draw_augment(rng), stats)
                          : normalize_only(raw, stats);
    for (std::size_t j = 0; j < per; ++j)
      values[static_cast<std::size_t>(i) * per + j] = static_cast<S>(prepared.image[j]);
  }
  return Tensor<S>::from_data({n, 3, size, size}, values);
}

std::vector<int> batch_labels(const Dataset& ds, const std::vector<int>& indices,
                              int level) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= ds.size())
      throw UsageError(detail::cat("sample index ", idx, " outside [0, ", ds.size(), ")"));
    const Sample& s = ds.samples[static_cast<std::size_t>(idx)];
    if (level == 1) {
      out.push_back(s.label);
    } else {
      if (static_cast<int>(s.level_labels.size()) < level)
        throw DataError(detail::cat("sample ", idx, " has no level-", level, " label"));
      out.push_back(s.level_labels[static_cast<std::size_t>(level - 1)]);
    }
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, int held_out,
                                                            std::uint64_t seed) {
  if (n < 0 || held_out < 0 || held_out > n)
    throw UsageError(detail::cat("cannot hold out ", held_out, " of ", n, " samples"));
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  std::vector<int> kept(idx.begin(), idx.end() - held_out);
  std::vector<int> held(idx.end() - held_out, idx.end());
  return {std::move(kept), std::move(held)};
}

template Tensor<float> make_batch<float>(const Dataset&, const std::vector<int>&, bool,
                                         Rng&, const ChannelStats&);
template Tensor<double> make_batch<double>(const Dataset&, const std::vector<int>&, bool,
                                           Rng&, const ChannelStats&);

}  // namespace anynet
