#include "deepgrading/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "deepgrading/errors.hpp"

namespace dg {

static_assert(std::endian::native == std::endian::little,
              "volume I/O assumes a little-endian host");

namespace {

constexpr int kHeaderSize = 348;
constexpr int kDataOffset = 352;

template <class T>
void put(char* buf, int off, T v) {
  std::memcpy(buf + off, &v, sizeof(T));
}

template <class T>
T get(const char* buf, int off) {
  T v;
  std::memcpy(&v, buf + off, sizeof(T));
  return v;
}

int bytes_per_voxel(VoxelType t) {
  switch (t) {
    case VoxelType::UInt8: return 1;
    case VoxelType::Int16: return 2;
    case VoxelType::Float32: return 4;
  }
  throw DataError("unsupported voxel type");
}

VoxelType checked_type(int code) {
  switch (code) {
    case 2: return VoxelType::UInt8;
    case 4: return VoxelType::Int16;
    case 16: return VoxelType::Float32;
    default:
      throw DataError("unsupported NIfTI datatype code " + std::to_string(code));
  }
}

std::vector<char> encode(const ImageFile& img) {
  const std::size_t n = img.values.size();
  std::vector<char> out(n * bytes_per_voxel(img.type));
  for (std::size_t i = 0; i < n; ++i) {
    const float v = img.values[i];
    switch (img.type) {
      case VoxelType::UInt8: {
        if (!(v >= 0 && v <= 255) || v != std::floor(v))
          throw DataError("value not representable as uint8");
        out[i] = static_cast<char>(static_cast<std::uint8_t>(v));
        break;
      }
      case VoxelType::Int16: {
        if (!(v >= -32768 && v <= 32767) || v != std::floor(v))
          throw DataError("value not representable as int16");
        put<std::int16_t>(out.data(), static_cast<int>(2 * i), static_cast<std::int16_t>(v));
        break;
      }
      case VoxelType::Float32:
        std::memcpy(out.data() + 4 * i, &v, 4);
        break;
    }
  }
  return out;
}

std::vector<float> decode(const std::vector<char>& raw, VoxelType t, std::size_t n) {
  if (raw.size() < n * bytes_per_voxel(t)) throw DataError("truncated voxel data");
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (t) {
      case VoxelType::UInt8: v[i] = static_cast<std::uint8_t>(raw[i]); break;
      case VoxelType::Int16: {
        std::int16_t x;
        std::memcpy(&x, raw.data() + 2 * i, 2);
        v[i] = x;
        break;
      }
      case VoxelType::Float32: std::memcpy(&v[i], raw.data() + 4 * i, 4); break;
    }
  }
  return v;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::filesystem::path& p, const char* data, std::size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out.write(data, static_cast<std::streamsize>(n));
  if (!out) throw DataError("write failed for " + p.string());
}

const char* type_name(VoxelType t) {
  switch (t) {
    case VoxelType::UInt8: return "uint8";
    case VoxelType::Int16: return "int16";
    case VoxelType::Float32: return "float32";
  }
  return "?";
}

VoxelType type_from_name(const std::string& s) {
  if (s == "uint8") return VoxelType::UInt8;
  if (s == "int16") return VoxelType::Int16;
  if (s == "float32") return VoxelType::Float32;
  throw DataError("unsupported raw dtype '" + s + "'");
}

ImageFile from_volume(const Volume3D& v) {
  return {v.dims(), v.spacing(), VoxelType::Float32, v.data()};
}

ImageFile from_labels(const LabelVolume& lab) {
  ImageFile f{lab.dims(), lab.spacing(), VoxelType::Int16, {}};
  f.values.assign(lab.grid().data().begin(), lab.grid().data().end());
  return f;
}

Volume3D to_volume(ImageFile f) {
  for (float v : f.values)
    if (!std::isfinite(v)) throw DataError("non-finite voxel value");
  return Volume3D(f.dims, f.spacing, std::move(f.values));
}

LabelVolume to_labels(const ImageFile& f, int structure_count) {
  std::vector<std::int32_t> lab(f.values.size());
  int max_label = 0;
  for (std::size_t i = 0; i < lab.size(); ++i) {
    const float v = f.values[i];
    if (v != std::floor(v)) throw DataError("label volume has non-integer values");
    lab[i] = static_cast<std::int32_t>(v);
    max_label = std::max(max_label, lab[i]);
  }
  const int s = structure_count > 0 ? structure_count : std::max(max_label, 1);
  return LabelVolume(Grid3<std::int32_t>(f.dims, f.spacing, std::move(lab)), s);
}

bool is_nifti(const std::filesystem::path& p) { return p.extension() == ".nii"; }

}  // namespace

ImageFile read_nifti_file(const std::filesystem::path& path) {
  const std::vector<char> buf = slurp(path);
  if (buf.size() < kHeaderSize) throw DataError("file too short for NIfTI-1 header: " + path.string());
  const auto hdr_size = get<std::int32_t>(buf.data(), 0);
  if (hdr_size != kHeaderSize) {
    const auto u = static_cast<std::uint32_t>(hdr_size);
    const std::uint32_t swapped = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
    if (swapped == static_cast<std::uint32_t>(kHeaderSize))
      throw DataError("big-endian NIfTI not supported: " + path.string());
    throw DataError("not a NIfTI-1 file: " + path.string());
  }
  if (std::memcmp(buf.data() + 344, "n+1", 4) != 0)
    throw DataError("only single-file NIfTI-1 (n+1) supported: " + path.string());

  ImageFile img;
  const auto ndim = get<std::int16_t>(buf.data(), 40);
  if (ndim < 1 || ndim > 7) throw DataError("bad NIfTI dim[0]");
  std::int16_t d[8];
  for (int i = 0; i < 8; ++i) d[i] = get<std::int16_t>(buf.data(), 40 + 2 * i);
  for (int i = 4; i <= ndim; ++i)
    if (d[i] > 1) throw DataError("only 3D NIfTI volumes are supported");
  img.dims = {d[1], ndim >= 2 ? d[2] : 1, ndim >= 3 ? d[3] : 1};
  if (img.dims.x <= 0 || img.dims.y <= 0 || img.dims.z <= 0) throw DataError("bad NIfTI dims");
  img.type = checked_type(get<std::int16_t>(buf.data(), 70));
  auto pix = [&](int i) {
    const float p = get<float>(buf.data(), 76 + 4 * i);
    return p > 0 ? static_cast<double>(p) : 1.0;
  };
  img.spacing = {pix(1), pix(2), pix(3)};
  const auto vox_offset = static_cast<std::size_t>(get<float>(buf.data(), 108));
  if (vox_offset < kHeaderSize || vox_offset > buf.size()) throw DataError("bad vox_offset");
  const std::vector<char> payload(buf.begin() + static_cast<std::ptrdiff_t>(vox_offset), buf.end());
  img.values = decode(payload, img.type, img.dims.count());

  const float slope = get<float>(buf.data(), 112);
  const float inter = get<float>(buf.data(), 116);
  if (slope != 0.0f && std::isfinite(slope) && (slope != 1.0f || inter != 0.0f)) {
    for (float& v : img.values) v = v * slope + inter;
    img.type = VoxelType::Float32;
  }
  return img;
}

void write_nifti_file(const std::filesystem::path& path, const ImageFile& img) {
  if (img.values.size() != img.dims.count()) throw DataError("image size/dims mismatch");
  if (img.dims.x > 32767 || img.dims.y > 32767 || img.dims.z > 32767)
    throw DataError("dimension too large for NIfTI-1");
  std::vector<char> buf(kDataOffset, 0);
  put<std::int32_t>(buf.data(), 0, kHeaderSize);
  buf[38] = 'r';
  const std::int16_t dim[8] = {3,
                               static_cast<std::int16_t>(img.dims.x),
                               static_cast<std::int16_t>(img.dims.y),
                               static_cast<std::int16_t>(img.dims.z),
                               1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(buf.data(), 40 + 2 * i, dim[i]);
  put<std::int16_t>(buf.data(), 70, static_cast<std::int16_t>(img.type));
  put<std::int16_t>(buf.data(), 72, static_cast<std::int16_t>(8 * bytes_per_voxel(img.type)));
  const float pixdim[8] = {1.0f,
                           static_cast<float>(img.spacing.x),
                           static_cast<float>(img.spacing.y),
                           static_cast<float>(img.spacing.z),
                           1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) put<float>(buf.data(), 76 + 4 * i, pixdim[i]);
  put<float>(buf.data(), 108, static_cast<float>(kDataOffset));
  put<float>(buf.data(), 112, 1.0f);
  buf[123] = 2;  // mm
  std::memcpy(buf.data() + 344, "n+1", 4);
  const std::vector<char> payload = encode(img);
  buf.insert(buf.end(), payload.begin(), payload.end());
  spit(path, buf.data(), buf.size());
}

Volume3D read_nifti(const std::filesystem::path& path) { return to_volume(read_nifti_file(path)); }

void write_nifti(const std::filesystem::path& path, const Volume3D& vol) {
  write_nifti_file(path, from_volume(vol));
}

LabelVolume read_nifti_labels(const std::filesystem::path& path, int structure_count) {
  return to_labels(read_nifti_file(path), structure_count);
}

void write_nifti_labels(const std::filesystem::path& path, const LabelVolume& lab) {
  write_nifti_file(path, from_labels(lab));
}

ImageFile read_raw_file(const std::filesystem::path& base) {
  std::filesystem::path meta = base;
  meta.replace_extension(".json");
  std::filesystem::path blob = base;
  blob.replace_extension(".raw");
  nlohmann::json j;
  try {
    std::ifstream in(meta);
    if (!in) throw DataError("cannot open " + meta.string());
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad raw sidecar " + meta.string() + ": " + e.what());
  }
  ImageFile img;
  try {
    const auto d = j.at("dims").get<std::vector<int>>();
    const auto s = j.at("spacing").get<std::vector<double>>();
    if (d.size() != 3 || s.size() != 3) throw DataError("raw sidecar dims/spacing need 3 entries");
    img.dims = {d[0], d[1], d[2]};
    img.spacing = {s[0], s[1], s[2]};
    img.type = type_from_name(j.at("dtype").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad raw sidecar " + meta.string() + ": " + e.what());
  }
  if (img.dims.x <= 0 || img.dims.y <= 0 || img.dims.z <= 0) throw DataError("bad raw dims");
  img.values = decode(slurp(blob), img.type, img.dims.count());
  return img;
}

void write_raw_file(const std::filesystem::path& base, const ImageFile& img) {
  if (img.values.size() != img.dims.count()) throw DataError("image size/dims mismatch");
  std::filesystem::path meta = base;
  meta.replace_extension(".json");
  std::filesystem::path blob = base;
  blob.replace_extension(".raw");
  const nlohmann::json j = {
      {"dims", {img.dims.x, img.dims.y, img.dims.z}},
      {"spacing", {img.spacing.x, img.spacing.y, img.spacing.z}},
      {"dtype", type_name(img.type)}};
  const std::string text = j.dump(2) + "\n";
  spit(meta, text.data(), text.size());
  const std::vector<char> payload = encode(img);
  spit(blob, payload.data(), payload.size());
}

Volume3D read_volume(const std::filesystem::path& path) {
  return to_volume(is_nifti(path) ? read_nifti_file(path) : read_raw_file(path));
}

void write_volume(const std::filesystem::path& path, const Volume3D& vol) {
  if (is_nifti(path))
    write_nifti_file(path, from_volume(vol));
  else
    write_raw_file(path, from_volume(vol));
}

LabelVolume read_labels(const std::filesystem::path& path, int structure_count) {
  return to_labels(is_nifti(path) ? read_nifti_file(path) : read_raw_file(path), structure_count);
}

void write_labels(const std::filesystem::path& path, const LabelVolume& lab) {
  if (is_nifti(path))
    write_nifti_file(path, from_labels(lab));
  else
    write_raw_file(path, from_labels(lab));
}

}  // namespace dg
