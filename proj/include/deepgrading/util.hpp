#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace dg {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a root seed and a named
/// component, e.g. derive_seed(root, "grader", patch_index).
std::uint64_t derive_seed(std::uint64_t root, std::string_view component,
                          std::uint64_t a = 0, std::uint64_t b = 0);

double sample_beta(Rng& rng, double a, double b);

// FNV-1a, 64 bit.
std::uint64_t fnv1a(std::span<const std::byte> bytes,
                    std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t hash_file(const std::filesystem::path& path);
/// Hash over the relative path and content of every regular file below dir,
/// in sorted path order.
std::uint64_t hash_tree(const std::filesystem::path& dir);
std::string hex64(std::uint64_t v);

template <class T>
std::uint64_t hash_values(std::span<const T> values,
                          std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(std::as_bytes(values), h);
}

}  // namespace dg
