#include "dunet/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "dunet/io.hpp"
#include "dunet/tensor.hpp"

namespace dunet {

Landmark Affine::apply(const Landmark& p) const {
  return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5], p.visible};
}

namespace {

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

bool inside(const Landmark& p) { return p.x >= 0 && p.x <= 1 && p.y >= 0 && p.y <= 1; }

// Face-frame template, u to the right and v down, both in semi-axis units.
std::vector<std::array<double, 2>> face_template(int k) {
  std::vector<std::array<double, 2>> pts = {
      {-0.38, -0.25}, {0.38, -0.25}, {0.0, 0.08}, {-0.32, 0.45}, {0.32, 0.45}};
  const int rest = std::max(0, k - 5);
  const int pairs = rest / 2;
  for (int j = 0; j < pairs; ++j) {
    const double t = std::numbers::pi * (j + 1) / (pairs + 1.5);
    const double r = 0.92;
    pts.push_back({-r * std::sin(t), -r * std::cos(t)});
    pts.push_back({r * std::sin(t), -r * std::cos(t)});
  }
  if (rest % 2 == 1) pts.push_back({0.0, 0.92});
  pts.resize(k);
  return pts;
}

void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f32(const std::string& in, std::size_t& pos) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += 4;
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

Sample generate_sample(std::uint64_t seed, int index, int num_landmarks, int resolution,
                       int channels) {
  if (resolution < 16) throw DataError("resolution must be at least 16");
  if (num_landmarks < 1) throw DataError("num_landmarks must be positive");
  if (channels < 1) throw DataError("channels must be positive");
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * U(rng); };

  const double cx = uni(0.42, 0.58);
  const double cy = uni(0.42, 0.58);
  const double ax = uni(0.22, 0.30);
  const double ay = uni(0.28, 0.36);
  const double th = uni(-15.0, 15.0) * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  auto to_image = [&](double u, double v) {
    const double px = u * ax, py = v * ay;
    return Landmark{cx + c * px - s * py, cy + s * px + c * py, true};
  };

  Sample out;
  out.channels = channels;
  out.resolution = resolution;
  for (const auto& [u, v] : face_template(num_landmarks)) {
    auto p = to_image(u, v);
    p.x = f32(std::clamp(p.x, 0.0, 1.0));
    p.y = f32(std::clamp(p.y, 0.0, 1.0));
    out.landmarks.push_back(p);
  }
  const auto le = to_image(-0.38, -0.25);
  const auto re = to_image(0.38, -0.25);
  out.reference_length = f32(std::hypot(re.x - le.x, re.y - le.y));

  const int R = resolution;
  const double skin = uni(0.3, 0.45);
  std::vector<double> tint(channels);
  for (auto& t : tint) t = uni(0.7, 1.0);
  out.image.assign(static_cast<std::size_t>(channels) * R * R, 0.0);
  for (int ch = 0; ch < channels; ++ch) {
    for (int i = 0; i < R; ++i) {
      for (int j = 0; j < R; ++j) {
        const double x = (j + 0.5) / R - cx, y = (i + 0.5) / R - cy;
        const double u = (c * x + s * y) / ax, v = (-s * x + c * y) / ay;
        const double r = std::sqrt(u * u + v * v);
        const double body = std::clamp((1.0 - r) * 8.0, 0.0, 1.0);
        out.image[(static_cast<std::size_t>(ch) * R + i) * R + j] =
            0.05 * U(rng) + body * skin * tint[ch];
      }
    }
  }

  // Markers, max-composited with peak 1 at the landmark's pixel.
  const double spread = std::max(0.6, R / 48.0);
  const int reach = static_cast<int>(std::ceil(3 * spread));
  for (std::size_t k = 0; k < out.landmarks.size(); ++k) {
    const auto& p = out.landmarks[k];
    const int pj = std::min(R - 1, static_cast<int>(p.x * R));
    const int pi = std::min(R - 1, static_cast<int>(p.y * R));
    const int own = static_cast<int>(k < 2 ? 0 : (k < 5 ? 1 : 2)) % channels;
    for (int ch = 0; ch < channels; ++ch) {
      const double gain = ch == own ? 1.0 : 0.6;
      for (int i = std::max(0, pi - reach); i <= std::min(R - 1, pi + reach); ++i) {
        for (int j = std::max(0, pj - reach); j <= std::min(R - 1, pj + reach); ++j) {
          const double d2 = (i - pi) * (i - pi) + (j - pj) * (j - pj);
          const double m = (d2 == 0 ? 1.0 : std::exp(-d2 / (2 * spread * spread))) * gain;
          double& px = out.image[(static_cast<std::size_t>(ch) * R + i) * R + j];
          px = std::max(px, m);
        }
      }
    }
  }
  for (double& v : out.image) v = f32(std::clamp(v, 0.0, 1.0));
  return out;
}

Dataset generate(std::uint64_t seed, int count, int num_landmarks, int resolution,
                 int channels) {
  if (count < 1) throw DataError("count must be at least 1");
  Dataset d;
  d.channels = channels;
  d.resolution = resolution;
  d.num_landmarks = num_landmarks;
  for (int i = 0; i < count; ++i) {
    d.samples.push_back(generate_sample(seed, i, num_landmarks, resolution, channels));
  }
  return d;
}

std::vector<int> flip_permutation(int num_landmarks) {
  std::vector<int> perm(num_landmarks);
  for (int i = 0; i < num_landmarks; ++i) perm[i] = i;
  auto swap = [&](int a, int b) {
    if (a < num_landmarks && b < num_landmarks) std::swap(perm[a], perm[b]);
  };
  swap(0, 1);
  swap(3, 4);
  for (int j = 0; j < (num_landmarks - 5) / 2; ++j) swap(5 + 2 * j, 6 + 2 * j);
  return perm;
}

Affine augment_affine(const AugmentParams& p) {
  const double a = p.angle_deg * std::numbers::pi / 180.0;
  const double c = p.scale * std::cos(a), s = p.scale * std::sin(a);
  // Rotation about (0.5, 0.5): y down, positive angle turns clockwise on screen.
  Affine t;
  t.m = {c, -s, 0.5 - c * 0.5 + s * 0.5, s, c, 0.5 - s * 0.5 - c * 0.5};
  if (p.scale == 1.0 && p.angle_deg == 0.0) t.m = {1, 0, 0, 0, 1, 0};
  if (p.flip) {
    t.m = {-t.m[0], -t.m[1], 1.0 - t.m[2], t.m[3], t.m[4], t.m[5]};
  }
  return t;
}

Sample apply_augment(const Sample& src, const AugmentParams& p) {
  if (!(p.scale > 0)) throw DataError("augment scale must be positive");
  const Affine A = augment_affine(p);
  const int R = src.resolution;
  const int K = static_cast<int>(src.landmarks.size());

  Sample out = src;
  out.augmentation = Augmentation{p, A, {}};
  auto& perm = out.augmentation->permutation;
  perm.resize(K);
  for (int i = 0; i < K; ++i) perm[i] = i;
  if (p.flip) perm = flip_permutation(K);
  for (int i = 0; i < K; ++i) {
    auto q = A.apply(src.landmarks[perm[i]]);
    q.visible = src.landmarks[perm[i]].visible && inside(q);
    out.landmarks[i] = q;
  }
  out.reference_length = src.reference_length * p.scale;

  // Inverse map in pixel units.
  const auto& m = A.m;
  const double det = m[0] * m[4] - m[1] * m[3];
  const double i00 = m[4] / det, i01 = -m[1] / det, i10 = -m[3] / det, i11 = m[0] / det;
  const double tx = m[2] * R, ty = m[5] * R;
  const bool identity = m == std::array<double, 6>{1, 0, 0, 0, 1, 0};
  for (int ch = 0; ch < src.channels; ++ch) {
    const double* plane = src.image.data() + static_cast<std::size_t>(ch) * R * R;
    double* dst = out.image.data() + static_cast<std::size_t>(ch) * R * R;
    for (int i = 0; i < R; ++i) {
      for (int j = 0; j < R; ++j) {
        if (identity) continue;
        const double X = j + 0.5 - tx, Y = i + 0.5 - ty;
        const double sx = i00 * X + i01 * Y - 0.5, sy = i10 * X + i11 * Y - 0.5;
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        auto at = [&](int y, int x) {
          return (x < 0 || y < 0 || x >= R || y >= R) ? 0.0 : plane[y * R + x];
        };
        dst[i * R + j] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
      }
    }
  }
  return out;
}

AugmentParams draw_augment(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> scale(0.75, 1.25);
  std::uniform_real_distribution<double> angle(-30.0, 30.0);
  std::bernoulli_distribution flip(0.5);
  AugmentParams p;
  p.scale = scale(rng);
  p.angle_deg = angle(rng);
  p.flip = flip(rng);
  return p;
}

Sample augment(const Sample& s, std::mt19937_64& rng) {
  return apply_augment(s, draw_augment(rng));
}

void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  const std::size_t image = static_cast<std::size_t>(d.channels) * d.resolution * d.resolution;
  std::string bin;
  for (const auto& s : d.samples) {
    if (s.image.size() != image || static_cast<int>(s.landmarks.size()) != d.num_landmarks) {
      throw DataError("sample does not match the dataset header");
    }
    for (double v : s.image) put_f32(bin, v);
    for (const auto& p : s.landmarks) {
      put_f32(bin, p.x);
      put_f32(bin, p.y);
      put_f32(bin, p.visible ? 1.0 : 0.0);
    }
    put_f32(bin, s.reference_length);
  }
  std::ostringstream m;
  m << "dunet-dataset 1\n"
    << "count " << d.samples.size() << "\n"
    << "landmarks " << d.num_landmarks << "\n"
    << "resolution " << d.resolution << "\n"
    << "channels " << d.channels << "\n"
    << "record_bytes " << 4 * (image + 3 * d.num_landmarks + 1) << "\n"
    << "# record: image f32[channels*resolution*resolution] at 0, then per landmark\n"
    << "# f32 x, y, visible, then f32 reference_length; little-endian\n";
  write_atomic(dir / "samples.bin", bin);
  write_atomic(dir / "manifest.txt", m.str());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::istringstream m(read_file(dir / "manifest.txt"));
  std::string magic;
  int version = 0;
  m >> magic >> version;
  if (magic != "dunet-dataset" || version != 1) throw DataError("unsupported dataset manifest");
  Dataset d;
  std::size_t count = 0, record = 0;
  std::string key;
  while (m >> key) {
    if (key[0] == '#') {
      std::getline(m, key);
      continue;
    }
    if (key == "count") m >> count;
    else if (key == "landmarks") m >> d.num_landmarks;
    else if (key == "resolution") m >> d.resolution;
    else if (key == "channels") m >> d.channels;
    else if (key == "record_bytes") m >> record;
    else throw DataError("unknown manifest key '" + key + "'");
  }
  const std::size_t image = static_cast<std::size_t>(d.channels) * d.resolution * d.resolution;
  if (record != 4 * (image + 3 * d.num_landmarks + 1)) {
    throw DataError("manifest record size is inconsistent");
  }
  const std::string bin = read_file(dir / "samples.bin");
  if (bin.size() != record * count) throw DataError("samples.bin has the wrong length");
  std::size_t pos = 0;
  for (std::size_t n = 0; n < count; ++n) {
    Sample s;
    s.channels = d.channels;
    s.resolution = d.resolution;
    s.image.resize(image);
    for (auto& v : s.image) v = get_f32(bin, pos);
    for (int k = 0; k < d.num_landmarks; ++k) {
      Landmark p;
      p.x = get_f32(bin, pos);
      p.y = get_f32(bin, pos);
      p.visible = get_f32(bin, pos) != 0.0;
      s.landmarks.push_back(p);
    }
    s.reference_length = get_f32(bin, pos);
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace dunet
