#include "evmae/region.hpp"

#include <fmt/format.h>

namespace evmae {

namespace {

void check_timestamp(const Region& r, const std::string& source, size_t i,
                     const Timestamp& ts, std::vector<std::string>& out) {
  const auto bad = [&](const char* what, int v) {
    out.push_back(fmt::format("region '{}' source '{}': timestamp {} has {} {}",
                              r.region_id, source, i, what, v));
  };
  if (ts.year != 0 && (ts.year < 2017 || ts.year > 2022)) bad("year", ts.year);
  if (ts.month < 0 || ts.month > 12) bad("month", ts.month);
  if (ts.day < 0 || ts.day > 31) bad("day", ts.day);
  if (ts.hour < 0 || ts.hour > 24) bad("hour", ts.hour);
}

}  // namespace

std::vector<std::string> validate_region(const Region& r) {
  std::vector<std::string> out;

  if (!(r.bounds[0] < r.bounds[2]))
    out.push_back(fmt::format("region '{}': bounds lon_min {} >= lon_max {}",
                              r.region_id, r.bounds[0], r.bounds[2]));
  if (!(r.bounds[1] < r.bounds[3]))
    out.push_back(fmt::format("region '{}': bounds lat_min {} >= lat_max {}",
                              r.region_id, r.bounds[1], r.bounds[3]));
  if (r.sources.empty())
    out.push_back(fmt::format("region '{}': no sources", r.region_id));

  for (const auto& [name, src] : r.sources) {
    const auto fail = [&](std::string msg) {
      out.push_back(fmt::format("region '{}' source '{}': {}", r.region_id,
                                name, std::move(msg)));
    };
    const SourceProfile& p = src.profile;
    if (p.name.empty()) fail("profile name empty");
    if (!p.name.empty() && p.name != name)
      fail(fmt::format("profile name '{}' differs from key", p.name));
    if (p.bands < 1) fail(fmt::format("profile bands {} < 1", p.bands));
    if (p.height < 1 || p.width < 1)
      fail(fmt::format("profile dims {}x{} invalid", p.height, p.width));

    if (src.dims[0] < 1) fail("t < 1");
    if (src.dims[1] != static_cast<uint32_t>(p.bands))
      fail(fmt::format("band count {} != profile bands {}", src.dims[1],
                       p.bands));
    if (src.dims[2] != static_cast<uint32_t>(p.height) ||
        src.dims[3] != static_cast<uint32_t>(p.width))
      fail(fmt::format("spatial dims {}x{} != profile {}x{}", src.dims[2],
                       src.dims[3], p.height, p.width));
    if (src.timestamps.size() != src.dims[0])
      fail(fmt::format("timestamps length {} != t {}", src.timestamps.size(),
                       src.dims[0]));
    if (src.data.size() != src.byte_size())
      fail(fmt::format("payload size {} != t*c*h*w*sizeof(dtype) {}",
                       src.data.size(), src.byte_size()));
    for (size_t i = 0; i < src.timestamps.size(); ++i)
      check_timestamp(r, name, i, src.timestamps[i], out);
  }
  return out;
}

}  // namespace evmae
