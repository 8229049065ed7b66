#include "mseg/events.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace mseg {

void EventStream::validate() const {
  if (width < 1 || height < 1) throw DataError("event stream: sensor size must be positive");
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height)
      throw DataError("event " + std::to_string(i) + ": (" + std::to_string(e.x) + ", " +
                      std::to_string(e.y) + ") outside sensor " + std::to_string(width) + "x" +
                      std::to_string(height));
    if (e.p != 1 && e.p != -1)
      throw DataError("event " + std::to_string(i) + ": polarity must be -1 or +1");
    if (i > 0 && e.t_us < events[i - 1].t_us)
      throw DataError("event " + std::to_string(i) + ": timestamp decreases");
  }
}

VoxelGrid voxelize(const EventStream& stream, std::int64_t t0, std::int64_t t1,
                   std::int64_t bins) {
  if (t1 <= t0) throw DataError("voxelize: window end must be after start");
  if (bins < 1) throw DataError("voxelize: bins must be >= 1");
  stream.validate();
  VoxelGrid grid;
  grid.t0 = t0;
  grid.t1 = t1;
  grid.bins = bins;
  grid.data = TensorF({bins, stream.height, stream.width});
  auto cells = grid.data.mutable_data();
  const std::int64_t span = t1 - t0;
  for (const auto& e : stream.events) {
    if (e.t_us < t0 || e.t_us >= t1) continue;
    const std::int64_t bin = bins * (e.t_us - t0) / span;
    const auto idx = static_cast<std::size_t>((bin * stream.height + e.y) * stream.width + e.x);
    cells[idx] += static_cast<float>(e.p);
    ++grid.in_window;
  }
  return grid;
}

std::vector<EventStream> segment_by_count(const EventStream& stream, std::size_t count) {
  if (count < 1) throw DataError("segment_by_count: count must be >= 1");
  std::vector<EventStream> out;
  for (std::size_t begin = 0; begin < stream.events.size(); begin += count) {
    const std::size_t end = std::min(stream.events.size(), begin + count);
    EventStream seg;
    seg.width = stream.width;
    seg.height = stream.height;
    seg.events.assign(stream.events.begin() + static_cast<std::ptrdiff_t>(begin),
                      stream.events.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(seg));
  }
  if (out.empty()) out.push_back(stream);
  return out;
}

EventStream read_events_text(std::istream& in) {
  EventStream s;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header) {
      long long w = 0, h = 0;
      char extra = 0;
      if (std::sscanf(line.c_str(), "# events w=%lld h=%lld %c", &w, &h, &extra) != 2 || w < 1 ||
          h < 1)
        throw DataError("line " + std::to_string(lineno) +
                        ": expected header '# events w=<W> h=<H>'");
      s.width = w;
      s.height = h;
      header = true;
      continue;
    }
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    long long t = 0, x = 0, y = 0, p = 0;
    std::string rest;
    if (!(ls >> t >> x >> y >> p) || (ls >> rest))
      throw DataError("line " + std::to_string(lineno) + ": expected 't_us x y p'");
    if (p != 1 && p != -1)
      throw DataError("line " + std::to_string(lineno) + ": polarity must be -1 or 1");
    if (x < 0 || y < 0 || x >= s.width || y >= s.height)
      throw DataError("line " + std::to_string(lineno) + ": coordinate outside sensor");
    if (!s.events.empty() && t < s.events.back().t_us)
      throw DataError("line " + std::to_string(lineno) + ": timestamp decreases");
    s.events.push_back(Event{t, static_cast<std::int32_t>(x), static_cast<std::int32_t>(y),
                             static_cast<std::int8_t>(p)});
  }
  if (!header) throw DataError("line 1: missing '# events' header");
  return s;
}

void write_events_text(std::ostream& out, const EventStream& stream) {
  out << "# events w=" << stream.width << " h=" << stream.height << '\n';
  for (const auto& e : stream.events)
    out << e.t_us << ' ' << e.x << ' ' << e.y << ' ' << static_cast<int>(e.p) << '\n';
}

}  // namespace mseg
