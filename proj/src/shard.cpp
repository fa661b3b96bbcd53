#include "evmae/shard.hpp"

#include <fmt/format.h>
#include <fstream>

#include "json.hpp"

namespace evmae {

namespace {

class ByteWriter {
 public:
  explicit ByteWriter(const std::filesystem::path& path)
      : out_(path, std::ios::binary | std::ios::trunc), path_(path.string()) {
    if (!out_) throw io_error(fmt::format("cannot open '{}' for write", path_));
  }

  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw io_error(fmt::format("write failed on '{}'", path_));
    written_ += n;
  }
  void u8(uint8_t v) { bytes(&v, 1); }
  void u16(uint16_t v) {
    const uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
    bytes(b, 2);
  }
  void u32(uint32_t v) {
    const uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                          static_cast<uint8_t>(v >> 16),
                          static_cast<uint8_t>(v >> 24)};
    bytes(b, 4);
  }
  uint64_t written() const { return written_; }

 private:
  std::ofstream out_;
  std::string path_;
  uint64_t written_ = 0;
};

class ByteReader {
 public:
  explicit ByteReader(const std::filesystem::path& path)
      : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw io_error(fmt::format("cannot open '{}'", path_));
  }

  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n)
      throw data_error(fmt::format("truncated payload in '{}'", path_));
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  uint16_t u16() {
    uint8_t b[2];
    bytes(b, 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  uint32_t u32() {
    uint8_t b[4];
    bytes(b, 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
  }
  const std::string& path() const { return path_; }

 private:
  std::ifstream in_;
  std::string path_;
};

nlohmann::ordered_json region_metadata(const Region& r) {
  nlohmann::ordered_json meta;
  meta["region_id"] = r.region_id;
  meta["bounds"] = r.bounds;
  nlohmann::ordered_json sources(nlohmann::ordered_json::value_t::object);
  for (const auto& [name, src] : r.sources) {
    nlohmann::ordered_json ts(nlohmann::ordered_json::value_t::array);
    for (const Timestamp& t : src.timestamps)
      ts.push_back({t.year, t.month, t.day, t.hour});
    sources[name] = {{"timestamps", std::move(ts)}};
  }
  meta["sources"] = std::move(sources);
  return meta;
}

}  // namespace

uint64_t write_shard(const std::vector<Region>& regions,
                     const std::filesystem::path& path) {
  for (const Region& r : regions) {
    const auto violations = validate_region(r);
    if (!violations.empty())
      throw data_error(fmt::format("invalid region '{}': {}", r.region_id,
                                   violations.front()));
  }

  ByteWriter w(path);
  w.bytes(kShardMagic, 4);
  w.u8(kShardVersion);
  w.u8(0x01);  // little-endian flag
  w.u16(0);    // reserved
  w.u32(static_cast<uint32_t>(regions.size()));

  for (const Region& r : regions) {
    const std::string meta = region_metadata(r).dump();
    w.u32(static_cast<uint32_t>(meta.size()));
    w.bytes(meta.data(), meta.size());
    w.u16(static_cast<uint16_t>(r.sources.size()));
    for (const auto& [name, src] : r.sources) {  // std::map: lexicographic
      w.u8(static_cast<uint8_t>(name.size()));
      w.bytes(name.data(), name.size());
      w.u8(static_cast<uint8_t>(src.profile.dtype));
      for (const uint32_t d : src.dims) w.u32(d);
      w.bytes(src.data.data(), src.data.size());
    }
  }
  return w.written();
}

std::vector<Region> read_shard(const std::filesystem::path& path) {
  ByteReader in(path);

  char magic[4];
  in.bytes(magic, 4);
  if (std::memcmp(magic, kShardMagic, 4) != 0)
    throw data_error(fmt::format("bad magic in '{}'", in.path()));
  const uint8_t version = in.u8();
  if (version != kShardVersion)
    throw data_error(
        fmt::format("unsupported version {} in '{}'", version, in.path()));
  const uint8_t endian = in.u8();
  const uint16_t reserved = in.u16();
  if (endian != 0x01 || reserved != 0)
    throw data_error(fmt::format("corrupt header in '{}'", in.path()));

  const uint32_t region_count = in.u32();
  std::vector<Region> regions;
  regions.reserve(region_count);

  for (uint32_t ri = 0; ri < region_count; ++ri) {
    const uint32_t meta_len = in.u32();
    std::string meta_str(meta_len, '\0');
    in.bytes(meta_str.data(), meta_len);

    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(meta_str);
    } catch (const nlohmann::json::exception& e) {
      throw data_error(
          fmt::format("bad region metadata in '{}': {}", in.path(), e.what()));
    }

    Region r;
    r.region_id = meta.at("region_id").get<std::string>();
    const auto& b = meta.at("bounds");
    for (int i = 0; i < 4; ++i) r.bounds[static_cast<size_t>(i)] = b.at(i);

    const uint16_t source_count = in.u16();
    for (uint16_t si = 0; si < source_count; ++si) {
      const uint8_t name_len = in.u8();
      std::string name(name_len, '\0');
      in.bytes(name.data(), name_len);

      SourceTensor src;
      const uint8_t code = in.u8();
      if (!dtype_from_code(code, src.profile.dtype))
        throw data_error(fmt::format("dtype code out of range ({}) in '{}'",
                                     code, in.path()));
      for (uint32_t& d : src.dims) d = in.u32();
      src.profile.name = name;
      src.profile.bands = static_cast<int>(src.dims[1]);
      src.profile.height = static_cast<int>(src.dims[2]);
      src.profile.width = static_cast<int>(src.dims[3]);

      src.data.resize(src.byte_size());
      in.bytes(src.data.data(), src.data.size());

      const auto& ts_json = meta.at("sources").at(name).at("timestamps");
      for (const auto& row : ts_json)
        src.timestamps.push_back(
            Timestamp{row.at(0), row.at(1), row.at(2), row.at(3)});

      r.sources.emplace(std::move(name), std::move(src));
    }

    const auto violations = validate_region(r);
    if (!violations.empty())
      throw data_error(fmt::format("invalid region in '{}': {}", in.path(),
                                   violations.front()));
    regions.push_back(std::move(r));
  }
  return regions;
}

}  // namespace evmae
