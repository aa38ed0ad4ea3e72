#pragma once
// Shared utilities: error taxonomy, deterministic RNG, CRC32, small image/grid
// containers and text formatting helpers used across the library.

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cali {

// ---------------------------------------------------------------------------
// Errors
//
// ValidationError / ConfigError / UsageError / FormatError map to CLI exit
// code 1 (bad inputs); anything else escaping to the CLI maps to exit code 2.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/axis mismatches between tensors or maps.
struct DimensionError : Error {
  using Error::Error;
};

// Structurally invalid configuration (negative sizes, empty channel lists, ...).
struct ConfigError : Error {
  using Error::Error;
};

// API misuse (backward on non-scalar, scalar read of non-scalar, ...).
struct UsageError : Error {
  using Error::Error;
};

// Semantically invalid data (labels out of range, non-one-hot targets, ...).
struct ValidationError : Error {
  using Error::Error;
};

// Malformed serialized inputs; message carries a byte offset where known.
struct FormatError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// All randomness in the library flows through Rng so runs are reproducible
// from a single seed.  Sub-streams are derived with splitmix64 so consumers
// (init, data layout, shuffles, ...) cannot perturb each other.
// ---------------------------------------------------------------------------

uint64_t splitmix64(uint64_t x);

// Derives an independent stream seed from (seed, stream id).
uint64_t derive_seed(uint64_t seed, uint64_t stream);

class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint32_t next_u32();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);
  // Standard normal via Box-Muller (implementation-independent sequence).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Hashing / checksums
// ---------------------------------------------------------------------------

// CRC-32 (IEEE, reflected polynomial 0xEDB88320), as used by zip/png.
uint32_t crc32(const void* data, size_t n);

// FNV-1a, used for cheap bitwise content hashes in tests and determinism checks.
uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 1469598103934665603ull);

// ---------------------------------------------------------------------------
// Text formatting
// ---------------------------------------------------------------------------

// Formats a value with 6 significant digits ("%.6g"); all CSV output goes
// through this so identical runs emit byte-identical files.
std::string format_g6(double v);

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// ---------------------------------------------------------------------------
// Grids and images
// ---------------------------------------------------------------------------

template <typename T>
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<T> cells;

  Grid() = default;
  Grid(int r, int c, T fill = T()) : rows(r), cols(c), cells(static_cast<size_t>(r) * c, fill) {}

  T& at(int r, int c) { return cells[static_cast<size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return cells[static_cast<size_t>(r) * cols + c]; }
  bool in_bounds(int r, int c) const { return r >= 0 && r < rows && c >= 0 && c < cols; }
};

using ClassMap = Grid<uint8_t>;  // per-pixel class ids
using BoolMap = Grid<uint8_t>;   // 0/1 masks

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

struct ImageRgb {
  int rows = 0;
  int cols = 0;
  std::vector<Rgb> pixels;

  ImageRgb() = default;
  ImageRgb(int r, int c) : rows(r), cols(c), pixels(static_cast<size_t>(r) * c) {}
  Rgb& at(int r, int c) { return pixels[static_cast<size_t>(r) * cols + c]; }
  const Rgb& at(int r, int c) const { return pixels[static_cast<size_t>(r) * cols + c]; }
};

// Writes an 8-bit binary PPM (P6).
void write_ppm(const std::string& path, const ImageRgb& img);

}  // namespace cali
