#include "datadiet/io.hpp"

#include "datadiet/errors.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace datadiet {

std::string digest_hex(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::string digest_json(const Json& value) { return digest_hex(value.dump()); }

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw ArtifactError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* BinaryReader::take(std::size_t count, const char* what) {
  if (count > bytes_.size() - offset_) {
    throw FormatError(std::string("truncated file while reading ") + what, offset_);
  }
  const char* p = bytes_.data() + offset_;
  offset_ += count;
  return p;
}

void write_container_header(BinaryWriter& out, std::string_view magic, const Json& header) {
  std::string text = header.dump();
  out.put_bytes(magic);
  out.put<std::uint64_t>(text.size());
  out.put_bytes(text);
}

Json read_container_header(BinaryReader& in, std::string_view magic) {
  const auto found = in.get_bytes(magic.size(), "magic");
  if (found != magic) throw FormatError("bad magic, expected '" + std::string(magic) + "'", 0);
  const auto length = in.get<std::uint64_t>("header length");
  const auto start = in.offset();
  const auto text = in.get_bytes(length, "header");
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what(), start);
  }
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      auto comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::string provenance_comment(const std::string& config_digest, std::uint64_t master_seed) {
  return "# config_digest=" + config_digest + " master_seed=" + std::to_string(master_seed) + "\n";
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) return std::to_string(value);
  return std::string(buf, end);
}

}  // namespace datadiet
