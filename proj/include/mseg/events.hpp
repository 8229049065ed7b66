#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

struct Event {
  std::int64_t t_us = 0;
  std::int32_t x = 0;  // column
  std::int32_t y = 0;  // row
  std::int8_t p = 1;   // -1 or +1

  bool operator==(const Event&) const = default;
};

struct EventStream {
  std::vector<Event> events;
  std::int64_t width = 0;
  std::int64_t height = 0;

  /// Non-decreasing timestamps, in-bounds coordinates, polarity +-1.
  void validate() const;
  bool operator==(const EventStream&) const = default;
};

/// Signed event counts per (bin, row, column) over the half-open window
/// [t0, t1).
struct VoxelGrid {
  TensorF data;  // bins x H x W
  std::int64_t t0 = 0;
  std::int64_t t1 = 0;
  std::int64_t bins = 0;
  std::int64_t in_window = 0;  // number of events accumulated
};

/// An event at t adds p to bin floor(bins * (t - t0) / (t1 - t0)); events
/// outside [t0, t1) are skipped. Out-of-bounds coordinates raise DataError
/// naming the record index.
VoxelGrid voxelize(const EventStream& stream, std::int64_t t0, std::int64_t t1,
                   std::int64_t bins);

/// Consecutive chunks of `count` events; the remainder forms a final shorter
/// chunk.
std::vector<EventStream> segment_by_count(const EventStream& stream, std::size_t count);

/// Text format: header `# events w=<W> h=<H>`, then `t_us x y p` per line.
/// Malformed input raises DataError with the 1-based line number.
EventStream read_events_text(std::istream& in);
void write_events_text(std::ostream& out, const EventStream& stream);

}  // namespace mseg
