#include "cosplace/binary_io.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

namespace cosplace::io {

Tag make_tag(std::string_view s) {
  Tag t{};
  for (std::size_t i = 0; i < t.size() && i < s.size(); ++i) t[i] = s[i];
  return t;
}

std::size_t Container::count(std::string_view tag) const {
  const Tag t = make_tag(tag);
  std::size_t n = 0;
  for (const Section& s : sections) n += s.tag == t ? 1 : 0;
  return n;
}

const Section& Container::only(std::string_view tag) const {
  const auto found = all(tag);
  if (found.size() != 1) {
    throw Error(ErrorCode::kParse, "expected exactly one '" + std::string(tag) +
                                       "' section, found " + std::to_string(found.size()));
  }
  return *found.front();
}

std::vector<const Section*> Container::all(std::string_view tag) const {
  const Tag t = make_tag(tag);
  std::vector<const Section*> out;
  for (const Section& s : sections) {
    if (s.tag == t) out.push_back(&s);
  }
  return out;
}

std::string encode_container(const Container& c) {
  Writer w;
  w.put_raw(c.magic);
  w.put(c.version);
  w.put(static_cast<std::uint32_t>(c.sections.size()));
  for (const Section& s : c.sections) {
    w.put_raw(std::string_view(s.tag.data(), s.tag.size()));
    w.put(static_cast<std::uint64_t>(s.payload.size()));
    w.put_raw(s.payload);
  }
  return std::string(w.view());
}

Container decode_container(std::string_view bytes, std::string_view magic,
                           std::uint32_t version, const std::string& context) {
  Reader r(bytes, context);
  Container c;
  c.magic = std::string(r.take(8));
  if (c.magic != magic) throw Error(ErrorCode::kParse, context + ": bad magic");
  c.version = r.get<std::uint32_t>();
  if (c.version != version) {
    throw Error(ErrorCode::kParse, context + ": unsupported version " + std::to_string(c.version));
  }
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    Section s;
    const std::string_view tag = r.take(4);
    std::copy(tag.begin(), tag.end(), s.tag.begin());
    const auto len = r.get<std::uint64_t>();
    s.payload = std::string(r.take(static_cast<std::size_t>(len)));
    c.sections.push_back(std::move(s));
  }
  r.expect_end();
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write to '" + path + "' failed");
}

}  // namespace cosplace::io
