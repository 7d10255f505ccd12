// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0

#include "fetr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>
#include <zlib.h>

namespace fs = std::filesystem;

namespace fetr {

namespace {

uint64_t fnv1a(const uint8_t* p, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t fnv1a_str(const std::string& s, uint64_t h) {
  return fnv1a(reinterpret_cast<const uint8_t*>(s.data()), s.size(), h);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

uint8_t to_byte(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

// --- PPM ---------------------------------------------------------------

// Whitespace-and-comment-aware token scan over the PPM header.
bool next_ppm_token(const std::vector<uint8_t>& b, size_t& pos, std::string& tok) {
  tok.clear();
  while (pos < b.size()) {
    const char c = static_cast<char>(b[pos]);
    if (c == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  while (pos < b.size()) {
    const char c = static_cast<char>(b[pos]);
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') break;
    tok.push_back(c);
    ++pos;
  }
  return !tok.empty();
}

Image decode_ppm(const std::vector<uint8_t>& b) {
  size_t pos = 2;  // past "P6"
  std::string tok;
  long vals[3];
  for (int i = 0; i < 3; ++i) {
    if (!next_ppm_token(b, pos, tok))
      throw DataError("ppm: truncated header at byte " + std::to_string(pos));
    char* end = nullptr;
    vals[i] = std::strtol(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0' || vals[i] <= 0)
      throw DataError("ppm: bad header token '" + tok + "' at byte " + std::to_string(pos));
  }
  if (vals[2] != 255) throw DataError("ppm: only maxval 255 is supported");
  if (pos >= b.size()) throw DataError("ppm: missing pixel data at byte " + std::to_string(pos));
  ++pos;  // single whitespace after maxval
  const int w = static_cast<int>(vals[0]), h = static_cast<int>(vals[1]);
  const size_t need = static_cast<size_t>(w) * h * 3;
  if (b.size() - pos < need)
    throw DataError("ppm: truncated pixel data at byte " + std::to_string(b.size()) + ", need " +
                    std::to_string(pos + need));
  Image img;
  img.h = h;
  img.w = w;
  img.rgb.resize(need);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(b[pos + (static_cast<size_t>(y) * w + x) * 3 + c]) / 255.0f;
  return img;
}

// --- PNG (8-bit RGB, non-interlaced) -------------------------------------

uint32_t read_be32(const std::vector<uint8_t>& b, size_t pos) {
  return (static_cast<uint32_t>(b[pos]) << 24) | (static_cast<uint32_t>(b[pos + 1]) << 16) |
         (static_cast<uint32_t>(b[pos + 2]) << 8) | static_cast<uint32_t>(b[pos + 3]);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

Image decode_png(const std::vector<uint8_t>& b) {
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (b.size() < 8 || std::memcmp(b.data(), sig, 8) != 0)
    throw DataError("png: bad signature at byte 0");

  size_t pos = 8;
  uint32_t w = 0, h = 0;
  bool have_ihdr = false;
  std::vector<uint8_t> idat;
  while (pos + 8 <= b.size()) {
    const uint32_t len = read_be32(b, pos);
    const std::string type(reinterpret_cast<const char*>(&b[pos + 4]), 4);
    if (pos + 12 + len > b.size())
      throw DataError("png: truncated chunk '" + type + "' at byte " + std::to_string(pos));
    const size_t data_pos = pos + 8;
    if (type == "IHDR") {
      if (len != 13) throw DataError("png: bad IHDR length at byte " + std::to_string(pos));
      w = read_be32(b, data_pos);
      h = read_be32(b, data_pos + 4);
      const uint8_t depth = b[data_pos + 8], color = b[data_pos + 9], interlace = b[data_pos + 12];
      if (depth != 8)
        throw DataError("png: only 8-bit depth supported, got " + std::to_string(depth));
      if (color != 2)
        throw DataError("png: only 8-bit RGB (color type 2) supported, got color type " +
                        std::to_string(color));
      if (interlace != 0) throw DataError("png: interlaced images are not supported");
      have_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), b.begin() + static_cast<long>(data_pos),
                  b.begin() + static_cast<long>(data_pos + len));
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;  // len + type + crc
  }
  if (!have_ihdr || w == 0 || h == 0) throw DataError("png: missing or empty IHDR");
  if (idat.empty()) throw DataError("png: no IDAT data");

  const size_t stride = static_cast<size_t>(w) * 3;
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw DataError("png: zlib init failed");
  zs.next_in = idat.data();
  zs.avail_in = static_cast<uInt>(idat.size());
  zs.next_out = raw.data();
  zs.avail_out = static_cast<uInt>(raw.size());
  const int zret = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (zret != Z_STREAM_END || zs.avail_out != 0)
    throw DataError("png: inflate failed or pixel data truncated");

  // Undo per-row filters in place into the image buffer.
  std::vector<uint8_t> prev(stride, 0), cur(stride, 0);
  Image img;
  img.h = static_cast<int>(h);
  img.w = static_cast<int>(w);
  img.rgb.resize(static_cast<size_t>(3) * h * w);
  for (uint32_t y = 0; y < h; ++y) {
    const uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
    const uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1) + 1];
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= 3 ? cur[i - 3] : 0;
      const int up = prev[i];
      const int c = i >= 3 ? prev[i - 3] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += up; break;
        case 3: v += (a + up) / 2; break;
        case 4: v += paeth(a, up, c); break;
        default:
          throw DataError("png: unknown filter " + std::to_string(filter) + " in row " + std::to_string(y));
      }
      cur[i] = static_cast<uint8_t>(v & 0xff);
    }
    for (uint32_t x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        img.at(ch, static_cast<int>(y), static_cast<int>(x)) =
            static_cast<float>(cur[static_cast<size_t>(x) * 3 + static_cast<size_t>(ch)]) / 255.0f;
    std::swap(prev, cur);
  }
  return img;
}

// --- synthetic texture rendering -----------------------------------------

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1.0 - s), q = v * (1.0 - f * s), t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace

std::vector<uint8_t> encode_ppm(const Image& img) {
  char header[64];
  const int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", img.w, img.h);
  std::vector<uint8_t> out(static_cast<size_t>(n) + static_cast<size_t>(img.w) * img.h * 3);
  std::memcpy(out.data(), header, static_cast<size_t>(n));
  size_t pos = static_cast<size_t>(n);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) out[pos++] = to_byte(img.at(c, y, x));
  return out;
}

Image decode_image(const std::vector<uint8_t>& bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P') return decode_png(bytes);
  throw DataError("unrecognized image format at byte 0 (expected P6 PPM or PNG)");
}

DatasetManifest load_image_folder(const std::string& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root);
  DatasetManifest m;
  m.root = root;

  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path().filename().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("dataset root has no class directories: " + root);

  uint64_t hash = 0xcbf29ce484222325ull;
  for (const auto& cls : dirs) {
    std::vector<std::string> entries;
    for (const auto& e : fs::directory_iterator(fs::path(root) / cls)) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext == ".ppm" || ext == ".png") entries.push_back(e.path().filename().string());
    }
    std::sort(entries.begin(), entries.end());
    std::vector<std::string> kept;
    for (const auto& name : entries) {
      const std::string rel = cls + "/" + name;
      std::vector<uint8_t> bytes = read_file((fs::path(root) / rel).string());
      try {
        decode_image(bytes);
      } catch (const DataError& err) {
        std::fprintf(stderr, "warning: skipping undecodable %s (%s)\n", rel.c_str(), err.what());
        continue;
      }
      hash = fnv1a_str(rel, hash);
      hash = fnv1a(bytes.data(), bytes.size(), hash);
      kept.push_back(rel);
    }
    if (kept.empty()) throw DataError("class directory has no decodable images: " + cls);
    m.class_names.push_back(cls);
    m.files.push_back(std::move(kept));
  }

  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
  m.content_hash = hex;
  return m;
}

std::pair<DatasetManifest, DatasetManifest> split_train_val(const DatasetManifest& m, double ratio,
                                                            uint64_t seed) {
  if (ratio <= 0.0 || ratio >= 1.0) throw ContractError("split ratio must lie in (0,1)");
  DatasetManifest train = m, val = m;
  train.split_name = "train";
  val.split_name = "val";
  train.seed = val.seed = seed;
  train.split_ratio = val.split_ratio = ratio;
  for (size_t c = 0; c < m.files.size(); ++c) {
    const auto& all = m.files[c];
    if (all.size() < 2)
      throw DataError("class '" + m.class_names[c] + "' has fewer than 2 samples; cannot split");
    std::vector<size_t> idx(all.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(mix_seed(seed, 0xdead0000ull + c));
    rng.shuffle(idx);
    size_t n_train = static_cast<size_t>(std::lround(ratio * static_cast<double>(all.size())));
    n_train = std::min(std::max<size_t>(n_train, 1), all.size() - 1);
    std::vector<size_t> tr(idx.begin(), idx.begin() + static_cast<long>(n_train));
    std::vector<size_t> va(idx.begin() + static_cast<long>(n_train), idx.end());
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    train.files[c].clear();
    val.files[c].clear();
    for (size_t i : tr) train.files[c].push_back(all[i]);
    for (size_t i : va) val.files[c].push_back(all[i]);
  }
  return {train, val};
}

std::vector<LabeledImage> load_samples(const DatasetManifest& m) {
  std::vector<LabeledImage> out;
  for (size_t c = 0; c < m.files.size(); ++c)
    for (const auto& rel : m.files[c]) {
      LabeledImage s;
      s.image = decode_image(read_file((fs::path(m.root) / rel).string()));
      s.label = static_cast<int>(c);
      s.source_id = rel;
      out.push_back(std::move(s));
    }
  return out;
}

std::string DatasetManifest::to_json() const {
  nlohmann::ordered_json j;
  j["root"] = root;
  j["classes"] = class_names;
  j["seed"] = seed;
  j["split_ratio"] = split_ratio;
  nlohmann::ordered_json splits;
  nlohmann::ordered_json by_class;
  for (size_t c = 0; c < class_names.size(); ++c) by_class[class_names[c]] = files[c];
  splits[split_name] = by_class;
  j["splits"] = splits;
  j["content_hash"] = content_hash;
  return j.dump(2);
}

DatasetManifest generate_synthetic(const std::string& out_dir, int classes, int per_class, int size,
                                   uint64_t seed) {
  if (classes < 2 || per_class < 2) throw ContractError("synthetic: need >= 2 classes and >= 2 per class");
  if (size < 16) throw ContractError("synthetic: size must be >= 16");
  fs::create_directories(out_dir);

  for (int c = 0; c < classes; ++c) {
    // Class recipe: silhouette is shared (c mod 2); everything that actually
    // separates classes is texture and color.
    const int silhouette = c % 2;
    const double theta = M_PI * static_cast<double>(c) / classes;
    const double freq = 3.0 + 1.5 * static_cast<double>(c % 5);
    const double noise_amp = 0.02 + 0.05 * static_cast<double>((c * 3) % classes) / classes;
    const Rgb base = hsv_to_rgb(static_cast<double>(c) / classes, 0.65, 0.85);
    const Rgb alt = hsv_to_rgb(static_cast<double>(c) / classes + 0.08, 0.55, 0.40);

    char dirname[32];
    std::snprintf(dirname, sizeof(dirname), "class_%02d", c);
    const fs::path cdir = fs::path(out_dir) / dirname;
    fs::create_directories(cdir);

    for (int i = 0; i < per_class; ++i) {
      Rng rng(mix_seed(seed, (static_cast<uint64_t>(c) << 32) | static_cast<uint64_t>(i)));
      const double cx = size / 2.0 + rng.uniform(-size / 8.0, size / 8.0);
      const double cy = size / 2.0 + rng.uniform(-size / 8.0, size / 8.0);
      const double half = rng.uniform(0.30, 0.42) * size;
      const Rgb bg = {rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65)};
      const double bg_gx = rng.uniform(-0.3, 0.3) / size;
      const double bg_gy = rng.uniform(-0.3, 0.3) / size;
      const double hue_jitter = rng.uniform(-0.1, 0.1);

      Image img;
      img.h = img.w = size;
      img.rgb.assign(static_cast<size_t>(3) * size * size, 0.0f);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double dx = x - cx, dy = y - cy;
          const bool inside = silhouette == 0 ? (dx * dx + dy * dy <= half * half)
                                              : (std::max(std::abs(dx), std::abs(dy)) <= half);
          double r, g, b;
          if (inside) {
            const double phase = (std::cos(theta) * dx + std::sin(theta) * dy) / half;
            const double stripe = 0.5 + 0.5 * std::sin(M_PI * freq * phase);
            r = alt.r + (base.r - alt.r) * stripe;
            g = alt.g + (base.g - alt.g) * stripe;
            b = alt.b + (base.b - alt.b) * stripe;
            r += hue_jitter * 0.12;
            b -= hue_jitter * 0.12;
            r += noise_amp * rng.normal();
            g += noise_amp * rng.normal();
            b += noise_amp * rng.normal();
          } else {
            const double shade = bg_gx * (x - size / 2.0) + bg_gy * (y - size / 2.0);
            r = bg.r + shade + 0.04 * rng.normal();
            g = bg.g + shade + 0.04 * rng.normal();
            b = bg.b + shade + 0.04 * rng.normal();
          }
          img.at(0, y, x) = static_cast<float>(std::min(1.0, std::max(0.0, r)));
          img.at(1, y, x) = static_cast<float>(std::min(1.0, std::max(0.0, g)));
          img.at(2, y, x) = static_cast<float>(std::min(1.0, std::max(0.0, b)));
        }

      char fname[32];
      std::snprintf(fname, sizeof(fname), "img_%04d.ppm", i);
      const std::vector<uint8_t> bytes = encode_ppm(img);
      std::ofstream out(cdir / fname, std::ios::binary);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
      if (!out) throw DataError("synthetic: failed to write " + (cdir / fname).string());
    }
  }

  DatasetManifest m = load_image_folder(out_dir);
  m.seed = seed;
  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  mf << m.to_json() << "\n";
  return m;
}

}  // namespace fetr
