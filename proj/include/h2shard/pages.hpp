#pragma once

// Synthetic webpages and size-based domain sharding.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace h2shard {

inline constexpr std::uint64_t kKB = 1000;
inline constexpr std::uint64_t kMB = 1000 * kKB;
inline constexpr std::uint64_t kKiB = 1024;
/// Default boundary between small and large objects.
inline constexpr std::uint64_t kLargeObjectThreshold = 30 * kKB;

struct ObjectSpec {
  std::size_t id = 0;
  std::uint64_t size = 1;
  std::string hostname;

  friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

/// The base HTML is always served from hostnames.front().
struct PageSpec {
  std::string name;
  std::uint64_t html_size = 0;
  std::vector<ObjectSpec> objects;
  std::vector<std::string> hostnames;

  std::uint64_t total_bytes() const;
  std::uint64_t object_bytes() const;
  std::size_t count_at_least(std::uint64_t threshold) const;
  void validate() const;

  friend bool operator==(const PageSpec&, const PageSpec&) = default;
};

inline constexpr std::string_view kPresetPages[] = {"P365x1K", "P10x435K", "M2MB", "M8MB", "M12MB"};
PageSpec preset_page(std::string_view name);

struct SizeLaw {
  enum class Kind { uniform, geometric };
  Kind kind = Kind::uniform;
  std::uint64_t lo = 1;  // uniform uses lo only
  std::uint64_t hi = 1;
};

struct ObjectGroup {
  std::size_t count = 0;
  SizeLaw law;
  /// Stretchable groups absorb the difference to a requested total: the
  /// ladder's lower end rises toward `hi` and, once every member sits at
  /// `hi`, the whole group scales up evenly.
  bool stretch = false;
};

struct SynthParams {
  std::string name = "synthetic";
  std::uint64_t html_size = 0;
  std::vector<ObjectGroup> groups;
  std::optional<std::uint64_t> total;  // page bytes including HTML
  std::string hostname = "host0";
};

/// Deterministic page from `params`. Groups are interleaved evenly in object
/// order. Throws Error when the requested total cannot be reached within 1%.
PageSpec synth_page(const SynthParams& params);

struct ShardStrategy {
  enum class Kind { none, by_size, preset, round_robin };
  Kind kind = Kind::none;
  std::uint64_t threshold = kLargeObjectThreshold;  // by_size, and "large" for presets
  char preset = 'B';                                // 'A', 'B' or 'C'
  std::size_t hosts = 1;                            // round_robin

  static ShardStrategy none() { return {}; }
  static ShardStrategy by_size(std::uint64_t threshold) { return {Kind::by_size, threshold, 'B', 1}; }
  static ShardStrategy preset_type(char type) { return {Kind::preset, kLargeObjectThreshold, type, 1}; }
  static ShardStrategy round_robin(std::size_t k) { return {Kind::round_robin, kLargeObjectThreshold, 'B', k}; }
};

/// Parses "none", "size:<bytes>", "preset:A|B|C" or "rr:<k>".
ShardStrategy parse_shard_strategy(std::string_view text);
std::string to_string(const ShardStrategy& s);

/// Rewrites hostnames only; ids, sizes and object order are preserved.
///  by_size(T):   every object >= T gets its own fresh hostname.
///  preset A/C:   the 2 / 5 largest objects are isolated.
///  preset B:     every large object is isolated (needs >= 12 of them).
///  round_robin:  object i goes to hostname i mod k.
PageSpec shard(const PageSpec& page, const ShardStrategy& strategy);

inline constexpr const char* kPageSchema = "page/v1";
void write_page(std::ostream& out, const PageSpec& page);
PageSpec read_page(std::istream& in);

}  // namespace h2shard
