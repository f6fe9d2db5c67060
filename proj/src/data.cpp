#include "comen/data.hpp"

#include "comen/binary_io.hpp"
#include "comen/errors.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace comen {

namespace {

constexpr char kBundleMagic[] = "COMENDS1";

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag, int a, int b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

struct DomainStyle {
  std::vector<double> bias;
  std::vector<double> gain;
  double contrast = 1.0;
  double speckle = 0.0;
};

std::vector<double> signature(const DomainStyle& s) {
  std::vector<double> sig = s.bias;
  for (double g : s.gain) sig.push_back(g * s.contrast);
  sig.push_back(s.speckle);
  return sig;
}

// Domain palettes are redrawn until they sit at least `min_gap` apart in
// (bias, effective gain) space from every previously drawn domain.
std::vector<DomainStyle> draw_domain_styles(std::uint64_t seed, int domains, int channels) {
  constexpr double min_gap = 0.25;
  std::vector<DomainStyle> styles;
  for (int m = 0; m < domains; ++m) {
    auto rng = stream(seed, 0xD0u, m, 0);
    std::uniform_real_distribution<double> bias(0.25, 0.75);
    std::uniform_real_distribution<double> gain(0.08, 0.24);
    std::uniform_real_distribution<double> contrast(0.6, 1.0);
    std::uniform_real_distribution<double> speckle(0.0, 0.10);
    DomainStyle best;
    double best_gap = -1.0;
    for (int attempt = 0; attempt < 2000; ++attempt) {
      DomainStyle s;
      for (int c = 0; c < channels; ++c) {
        s.bias.push_back(bias(rng));
        s.gain.push_back(gain(rng));
      }
      s.contrast = contrast(rng);
      s.speckle = speckle(rng);
      double gap = std::numeric_limits<double>::infinity();
      const auto sig = signature(s);
      for (const auto& prev : styles) {
        const auto other = signature(prev);
        double d2 = 0.0;
        for (std::size_t i = 0; i < sig.size(); ++i) d2 += (sig[i] - other[i]) * (sig[i] - other[i]);
        gap = std::min(gap, std::sqrt(d2));
      }
      if (gap > best_gap) {
        best = s;
        best_gap = gap;
      }
      if (gap >= min_gap) break;
    }
    styles.push_back(std::move(best));
  }
  return styles;
}

Sample render(const DomainStyle& style, int domain, int label, int classes, const ImageShape& shape,
              std::mt19937_64& rng) {
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double angle = std::numbers::pi * label / classes + 0.10 * jitter(rng);
  const double freq = (1.5 + 0.75 * (label % 3)) * (1.0 + 0.05 * jitter(rng));
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  const double scale = 2.0 * std::numbers::pi * freq / std::max(shape.height, shape.width);

  std::vector<double> bias(style.bias);
  std::vector<double> gain(style.gain);
  for (int c = 0; c < shape.channels; ++c) {
    bias[c] += 0.02 * jitter(rng);
    gain[c] *= 1.0 + 0.05 * jitter(rng);
  }

  Sample s;
  s.class_label = label;
  s.true_domain = domain;
  s.pixels.resize(shape.pixel_count());
  std::size_t p = 0;
  for (int c = 0; c < shape.channels; ++c) {
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) {
        const double pattern = std::sin(scale * (x * ca + y * sa) + phase);
        const double v = bias[c] + gain[c] * style.contrast * pattern + style.speckle * (2.0 * unit(rng) - 1.0) +
                         0.04 * jitter(rng);
        s.pixels[p++] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return s;
}

}  // namespace

DatasetBundle generate_benchmark(const BenchmarkParams& params) {
  if (params.domains < 2 || params.classes < 2 || params.per_cell < 4 || params.image.channels < 1 ||
      params.image.height < 1 || params.image.width < 1) {
    throw std::invalid_argument("generate_benchmark: need domains >= 2, classes >= 2, per_cell >= 4 and a positive "
                                "image shape");
  }
  if (params.domains > 0xFFFF || params.classes > 0xFFFF) {
    throw std::invalid_argument("generate_benchmark: domain/class ids must fit in 16 bits");
  }
  DatasetBundle bundle;
  bundle.num_domains = params.domains;
  bundle.num_classes = params.classes;
  bundle.image = params.image;
  bundle.seed = params.seed;
  const auto styles = draw_domain_styles(params.seed, params.domains, params.image.channels);
  bundle.samples.reserve(static_cast<std::size_t>(params.domains) * params.classes * params.per_cell);
  for (int m = 0; m < params.domains; ++m) {
    for (int k = 0; k < params.classes; ++k) {
      auto rng = stream(params.seed, 0xCE11u, m, k);
      for (int n = 0; n < params.per_cell; ++n) {
        bundle.samples.push_back(render(styles[m], m, k, params.classes, params.image, rng));
      }
    }
  }
  return bundle;
}

FoldSplit leave_one_domain_out(const DatasetBundle& bundle, int held_out, std::uint64_t seed) {
  if (held_out < 0 || held_out >= bundle.num_domains) {
    throw std::out_of_range("leave_one_domain_out: domain " + std::to_string(held_out) + " outside [0, " +
                            std::to_string(bundle.num_domains) + ")");
  }
  FoldSplit split;
  split.held_out = held_out;
  std::vector<std::size_t> source;
  for (std::size_t i = 0; i < bundle.samples.size(); ++i) {
    if (bundle.samples[i].true_domain == held_out) split.test_index.push_back(i);
    else source.push_back(i);
  }
  auto rng = stream(seed, 0x5B117u, held_out, 0);
  std::shuffle(source.begin(), source.end(), rng);

  // Largest-remainder allocation of the val quota over (domain, class) cells.
  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t i : source) {
    const Sample& s = bundle.samples[i];
    cells[{s.true_domain, s.class_label}].push_back(i);
  }
  const auto target = static_cast<std::size_t>(std::llround(kValidationFraction * static_cast<double>(source.size())));
  std::vector<std::size_t> quota;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  std::size_t cell_id = 0;
  for (const auto& [key, members] : cells) {
    const double exact = kValidationFraction * static_cast<double>(members.size());
    quota.push_back(static_cast<std::size_t>(std::floor(exact)));
    assigned += quota.back();
    remainders.emplace_back(exact - std::floor(exact), cell_id++);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < target && r < remainders.size(); ++r, ++assigned) ++quota[remainders[r].second];

  std::vector<bool> is_val(bundle.samples.size(), false);
  cell_id = 0;
  for (const auto& [key, members] : cells) {
    for (std::size_t j = 0; j < quota[cell_id]; ++j) is_val[members[j]] = true;
    ++cell_id;
  }
  for (std::size_t i : source) (is_val[i] ? split.val_index : split.train_index).push_back(i);

  auto view = [&](const std::vector<std::size_t>& index, std::vector<TrainingExample>& out) {
    out.reserve(index.size());
    for (std::size_t i : index) out.push_back({bundle.samples[i].pixels, bundle.samples[i].class_label});
  };
  view(split.train_index, split.train);
  view(split.val_index, split.val);
  view(split.test_index, split.test);
  return split;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = ::crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize_bundle(const DatasetBundle& bundle) {
  ByteWriter w;
  w.put_bytes(std::string_view(kBundleMagic, 8));
  w.put_u32(static_cast<std::uint32_t>(bundle.num_domains));
  w.put_u32(static_cast<std::uint32_t>(bundle.num_classes));
  w.put_u32(static_cast<std::uint32_t>(bundle.image.channels));
  w.put_u32(static_cast<std::uint32_t>(bundle.image.height));
  w.put_u32(static_cast<std::uint32_t>(bundle.image.width));
  w.put_u32(static_cast<std::uint32_t>(bundle.samples.size()));
  for (const Sample& s : bundle.samples) {
    if (s.pixels.size() != bundle.image.pixel_count()) {
      throw std::invalid_argument("serialize_bundle: sample pixel count does not match image shape");
    }
    w.put_u16(static_cast<std::uint16_t>(s.class_label));
    w.put_u16(static_cast<std::uint16_t>(s.true_domain));
    for (float v : s.pixels) w.put_f32(v);
  }
  w.put_u32(crc32(w.view(8)));
  return w.take();
}

DatasetBundle deserialize_bundle(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(bytes.begin(), bytes.begin() + 8, kBundleMagic)) {
    throw MalformedHeaderError("bundle: missing COMENDS1 magic");
  }
  ByteReader r(bytes.subspan(8));
  DatasetBundle bundle;
  std::uint32_t fields[6];
  try {
    for (auto& f : fields) f = r.u32();
  } catch (const TruncatedPayloadError&) {
    throw MalformedHeaderError("bundle: header shorter than 32 bytes");
  }
  const auto [m, k, c, h, w, n] = fields;
  if (m == 0 || k == 0 || c == 0 || h == 0 || w == 0 || m > 0xFFFF || k > 0xFFFF || c > 4096 || h > 65536 ||
      w > 65536) {
    throw MalformedHeaderError("bundle: invalid header dimensions M=" + std::to_string(m) + " K=" + std::to_string(k) +
                               " C=" + std::to_string(c) + " H=" + std::to_string(h) + " W=" + std::to_string(w));
  }
  bundle.num_domains = static_cast<int>(m);
  bundle.num_classes = static_cast<int>(k);
  bundle.image = {static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)};
  const std::size_t pixels = bundle.image.pixel_count();
  const std::size_t expected = 8 + 24 + static_cast<std::size_t>(n) * (4 + 4 * pixels) + 4;
  if (bytes.size() < expected) {
    throw TruncatedPayloadError("bundle: truncated payload (" + std::to_string(bytes.size()) + " of " +
                                std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) throw ChecksumError("bundle: trailing bytes after checksum");
  const std::uint32_t stored =
      ByteReader(bytes.subspan(expected - 4)).u32();
  if (stored != crc32(bytes.subspan(8, expected - 12))) throw ChecksumError("bundle: checksum mismatch");

  bundle.samples.resize(n);
  for (Sample& s : bundle.samples) {
    s.class_label = r.u16();
    s.true_domain = r.u16();
    if (s.class_label >= bundle.num_classes || s.true_domain >= bundle.num_domains) {
      throw MalformedHeaderError("bundle: record label or domain outside header range");
    }
    s.pixels.resize(pixels);
    for (float& v : s.pixels) v = r.f32();
  }
  return bundle;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& path) {
  write_file(path, serialize_bundle(bundle));
}

DatasetBundle read_bundle(const std::filesystem::path& path) { return deserialize_bundle(read_file(path)); }

}  // namespace comen
