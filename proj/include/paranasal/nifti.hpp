#ifndef PARANASAL_NIFTI_HPP
#define PARANASAL_NIFTI_HPP

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/volume.hpp"

namespace paranasal {
namespace nifti {

// NIfTI-1 single-file header (348 bytes). Field layout follows the
// published standard; unused ANALYZE leftovers are kept for size.
#pragma pack(push, 1)
struct Header {
  std::int32_t sizeof_hdr;     // must be 348
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];         // dim[0] = number of dimensions
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];             // pixdim[1..3] = voxel size
  float vox_offset;            // offset of data in file
  float scl_slope, scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];               // "n+1\0"
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

enum Datatype : std::int16_t {
  DT_UINT8 = 2,
  DT_INT16 = 4,
  DT_INT32 = 8,
  DT_FLOAT32 = 16,
  DT_FLOAT64 = 64,
};

namespace detail {

template <class T>
void byte_swap(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

inline void swap_header(Header& h) {
  byte_swap(h.sizeof_hdr);
  byte_swap(h.extents);
  byte_swap(h.session_error);
  for (auto& d : h.dim) byte_swap(d);
  byte_swap(h.intent_p1);
  byte_swap(h.intent_p2);
  byte_swap(h.intent_p3);
  byte_swap(h.intent_code);
  byte_swap(h.datatype);
  byte_swap(h.bitpix);
  byte_swap(h.slice_start);
  for (auto& p : h.pixdim) byte_swap(p);
  byte_swap(h.vox_offset);
  byte_swap(h.scl_slope);
  byte_swap(h.scl_inter);
  byte_swap(h.slice_end);
  byte_swap(h.cal_max);
  byte_swap(h.cal_min);
  byte_swap(h.slice_duration);
  byte_swap(h.toffset);
  byte_swap(h.glmax);
  byte_swap(h.glmin);
  byte_swap(h.qform_code);
  byte_swap(h.sform_code);
  byte_swap(h.quatern_b);
  byte_swap(h.quatern_c);
  byte_swap(h.quatern_d);
  byte_swap(h.qoffset_x);
  byte_swap(h.qoffset_y);
  byte_swap(h.qoffset_z);
  for (auto& v : h.srow_x) byte_swap(v);
  for (auto& v : h.srow_y) byte_swap(v);
  for (auto& v : h.srow_z) byte_swap(v);
}

// RAII gzFile. zlib reads plain files transparently, so one path serves
// both .nii and .nii.gz.
class GzFile {
 public:
  GzFile(const std::string& path, const char* mode) : f_(gzopen(path.c_str(), mode)) {}
  ~GzFile() {
    if (f_) gzclose(f_);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;
  explicit operator bool() const { return f_ != nullptr; }
  gzFile get() const { return f_; }

 private:
  gzFile f_;
};

inline void read_exact(gzFile f, void* buf, std::size_t n, const std::string& path) {
  std::size_t got = 0;
  auto* p = static_cast<unsigned char*>(buf);
  while (got < n) {
    unsigned chunk = unsigned(std::min<std::size_t>(n - got, 1u << 30));
    int r = gzread(f, p + got, chunk);
    if (r <= 0) throw format_error("truncated NIfTI file: " + path);
    got += std::size_t(r);
  }
}

inline void write_exact(gzFile f, const void* buf, std::size_t n, const std::string& path) {
  std::size_t put = 0;
  auto* p = static_cast<const unsigned char*>(buf);
  while (put < n) {
    unsigned chunk = unsigned(std::min<std::size_t>(n - put, 1u << 30));
    int r = gzwrite(f, p + put, chunk);
    if (r <= 0) throw io_error("write failed: " + path);
    put += std::size_t(r);
  }
}

// 3x3 direction matrix from the header's qform quaternion or sform rows.
// Returns false when neither is set (the grid is taken as canonical).
inline bool direction_matrix(const Header& h, double m[3][3]) {
  if (h.sform_code > 0) {
    const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] = rows[i][j];
    return true;
  }
  if (h.qform_code > 0) {
    double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    double a2 = 1.0 - (b * b + c * c + d * d);
    double a = a2 > 0 ? std::sqrt(a2) : 0.0;
    double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    double r[3][3] = {
        {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
        {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
        {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c}};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] = r[i][j] * (j == 2 ? qfac : 1.0);
    return true;
  }
  return false;
}

}  // namespace detail

// Reduce a direction matrix to the nearest axis permutation with signs.
// perm[a] = source grid axis that corresponds to canonical axis a;
// flip[a] = whether that source axis must be reversed.
inline void nearest_axes(const double m[3][3], std::array<int, 3>& perm,
                         std::array<bool, 3>& flip) {
  std::array<bool, 3> used{false, false, false};
  for (int j = 0; j < 3; ++j) {  // source grid axis j = column j
    int best = -1;
    double best_abs = -1.0;
    for (int i = 0; i < 3; ++i) {
      if (std::abs(m[i][j]) > best_abs) {
        best_abs = std::abs(m[i][j]);
        best = i;
      }
    }
    if (used[best]) throw format_error("NIfTI orientation is not axis-aligned enough to canonicalize");
    used[best] = true;
    perm[best] = j;
    flip[best] = m[best][j] < 0;
  }
}

// Load a NIfTI-1 volume (.nii or .nii.gz) and canonicalize its axes to
// (left-right, posterior-anterior, inferior-superior). Intensities are
// converted to float; scl_slope / scl_inter are applied when present.
//
// Errors are reported distinctly: io_error (missing/unreadable file),
// format_error (malformed header), ndim_error (payload not 3D).
inline Volume load_volume(const std::string& path) {
  if (!std::filesystem::exists(path)) throw io_error("no such file: " + path);
  detail::GzFile f(path, "rb");
  if (!f) throw io_error("cannot open: " + path);

  Header h;
  detail::read_exact(f.get(), &h, sizeof(h), path);
  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    detail::swap_header(h);
    swapped = true;
    if (h.sizeof_hdr != 348) throw format_error("not a NIfTI-1 file (bad sizeof_hdr): " + path);
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
    throw format_error("not a NIfTI-1 file (bad magic): " + path);
  if (std::strncmp(h.magic, "ni1", 3) == 0)
    throw format_error("two-file NIfTI pairs are not supported: " + path);

  int ndim = h.dim[0];
  if (ndim < 1 || ndim > 7) throw format_error("corrupt dim[0] in NIfTI header: " + path);
  for (int d = ndim; d >= 4; --d) {
    if (h.dim[d] > 1) throw ndim_error("not a 3D volume (dim[0]=" + std::to_string(ndim) + "): " + path);
    ndim = d - 1;
  }
  if (ndim != 3) throw ndim_error("not a 3D volume (dim[0]=" + std::to_string(h.dim[0]) + "): " + path);

  std::array<int, 3> dims{h.dim[1], h.dim[2], h.dim[3]};
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw format_error("non-positive dimension in NIfTI header: " + path);
  std::array<double, 3> spacing;
  for (int a = 0; a < 3; ++a) {
    double p = std::abs(h.pixdim[a + 1]);
    spacing[a] = p > 0 ? p : 1.0;
  }

  std::size_t n = std::size_t(dims[0]) * dims[1] * dims[2];
  std::size_t elem = 0;
  switch (h.datatype) {
    case DT_UINT8: elem = 1; break;
    case DT_INT16: elem = 2; break;
    case DT_INT32: elem = 4; break;
    case DT_FLOAT32: elem = 4; break;
    case DT_FLOAT64: elem = 8; break;
    default:
      throw format_error("unsupported NIfTI datatype " + std::to_string(h.datatype) + ": " + path);
  }

  long off = long(h.vox_offset);
  if (off < long(sizeof(Header))) off = long(sizeof(Header)) + 4;
  long skip = off - long(sizeof(Header));
  if (skip > 0) {
    std::vector<char> junk(static_cast<std::size_t>(skip));
    detail::read_exact(f.get(), junk.data(), junk.size(), path);
  }

  std::vector<unsigned char> raw(n * elem);
  detail::read_exact(f.get(), raw.data(), raw.size(), path);

  std::vector<float> values(n);
  auto convert = [&](auto tag) {
    using T = decltype(tag);
    const T* src = reinterpret_cast<const T*>(raw.data());
    for (std::size_t i = 0; i < n; ++i) {
      T v = src[i];
      if (swapped && sizeof(T) > 1) detail::byte_swap(v);
      values[i] = float(v);
    }
  };
  switch (h.datatype) {
    case DT_UINT8: convert(std::uint8_t{}); break;
    case DT_INT16: convert(std::int16_t{}); break;
    case DT_INT32: convert(std::int32_t{}); break;
    case DT_FLOAT32: convert(float{}); break;
    case DT_FLOAT64: convert(double{}); break;
  }
  if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    for (auto& v : values) v = v * h.scl_slope + h.scl_inter;
  }

  // Canonicalize axes from the affine. Headers without q/sform are taken
  // as already canonical.
  std::array<int, 3> perm{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};
  double m[3][3];
  if (detail::direction_matrix(h, m)) nearest_axes(m, perm, flip);

  Volume out({dims[perm[0]], dims[perm[1]], dims[perm[2]]},
             {spacing[perm[0]], spacing[perm[1]], spacing[perm[2]]});
  bool identity = perm == std::array<int, 3>{0, 1, 2} && !flip[0] && !flip[1] && !flip[2];
  if (identity) {
    out.data.assign(values.begin(), values.end());
  } else {
    std::array<std::size_t, 3> stride{1, std::size_t(dims[0]), std::size_t(dims[0]) * dims[1]};
    for (int k = 0; k < out.dims[2]; ++k)
      for (int j = 0; j < out.dims[1]; ++j)
        for (int i = 0; i < out.dims[0]; ++i) {
          std::array<int, 3> c{i, j, k};
          std::size_t src = 0;
          for (int a = 0; a < 3; ++a) {
            int idx = flip[a] ? out.dims[a] - 1 - c[a] : c[a];
            src += std::size_t(idx) * stride[perm[a]];
          }
          out.at(i, j, k) = values[src];
        }
  }
  return out;
}

// Write a canonical volume as NIfTI-1 float32. A ".gz" suffix selects
// gzip compression; otherwise the bytes are written uncompressed.
inline void save_volume(const Volume& v, const std::string& path) {
  Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = std::int16_t(v.dims[0]);
  h.dim[2] = std::int16_t(v.dims[1]);
  h.dim[3] = std::int16_t(v.dims[2]);
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.datatype = DT_FLOAT32;
  h.bitpix = 32;
  h.pixdim[0] = 1.0f;
  for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = float(v.spacing[a]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // millimetres
  std::snprintf(h.descrip, sizeof(h.descrip), "paranasal canonical volume");
  h.qform_code = 1;
  h.sform_code = 1;
  // Canonical axes: identity rotation, so the affine is diag(spacing).
  h.quatern_b = h.quatern_c = h.quatern_d = 0.0f;
  h.srow_x[0] = float(v.spacing[0]);
  h.srow_y[1] = float(v.spacing[1]);
  h.srow_z[2] = float(v.spacing[2]);
  std::memcpy(h.magic, "n+1", 4);

  const bool gz = path.size() > 3 && path.substr(path.size() - 3) == ".gz";
  detail::GzFile f(path, gz ? "wb6" : "wbT");
  if (!f) throw io_error("cannot write: " + path);
  detail::write_exact(f.get(), &h, sizeof(h), path);
  const char ext[4] = {0, 0, 0, 0};
  detail::write_exact(f.get(), ext, 4, path);
  detail::write_exact(f.get(), v.data.data(), v.data.size() * sizeof(float), path);
}

}  // namespace nifti

using nifti::load_volume;
using nifti::save_volume;

}  // namespace paranasal

#endif  // PARANASAL_NIFTI_HPP
