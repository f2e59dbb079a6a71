#include "anynet/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace anynet {

namespace {

constexpr char kMagic[8] = {'A', 'N', 'Y', 'N', 'E', 'T', 'C', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_.good()) throw FormatError(detail::cat("cannot open checkpoint '", path, "'"));
  }

  void bytes(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw FormatError(detail::cat("'", path_, "': truncated checkpoint"));
  }

  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string str(std::uint64_t len) {
    if (len > (1u << 20))
      throw FormatError(detail::cat("'", path_, "': implausible string length ", len));
    std::string s(static_cast<std::size_t>(len), '\0');
    bytes(s.data(), s.size());
    return s;
  }

  void check_magic() {
    char m[8];
    bytes(m, 8);
    if (std::memcmp(m, kMagic, 8) != 0)
      throw FormatError(detail::cat("'", path_, "': not a checkpoint (bad magic)"));
  }

  const std::string& path() const { return path_; }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace

template <typename S>
void save_checkpoint(AnytimeNetwork<S>& net, const std::string& config_text,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw FormatError(detail::cat("cannot write checkpoint '", path, "'"));
  out.write(kMagic, 8);
  put_u64(out, config_text.size());
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));

  auto entries = named_state(net);
  put_u64(out, entries.size());
  for (const auto& e : entries) {
    put_u64(out, e.name.size());
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    out.put(e.learnable ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (S v : *e.values) put_f64(out, static_cast<double>(v));
  }
  if (!out.good()) throw FormatError(detail::cat("write to '", path, "' failed"));
}

std::string checkpoint_config_text(const std::string& path) {
  Reader r(path);
  r.check_magic();
  return r.str(r.u64());
}

template <typename S>
void load_checkpoint(AnytimeNetwork<S>& net, const std::string& path) {
  Reader r(path);
  r.check_magic();
  r.str(r.u64());  // config text, not needed here

  auto entries = named_state(net);
  const std::uint64_t count = r.u64();
  if (count != entries.size())
    throw ConfigError(detail::cat("'", path, "' holds ", count, " entries but the network has ",
                                  entries.size(),
                                  "; it was written for a different configuration"));
  for (auto& e : entries) {
    const std::string name = r.str(r.u64());
    if (name != e.name)
      throw ConfigError(detail::cat("'", path, "': entry '", name, "' where '", e.name,
                                    "' was expected; different configuration"));
    unsigned char learnable;
    r.bytes(&learnable, 1);
    if ((learnable != 0) != e.learnable)
      throw ConfigError(detail::cat("'", path, "': entry '", name, "' learnable flag mismatch"));
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    if (shape != e.shape)
      throw ConfigError(detail::cat("'", path, "': entry '", name,
                                    "' shape mismatch; different configuration"));
    for (S& v : *e.values) v = static_cast<S>(r.f64());
  }
}

template void save_checkpoint<float>(AnytimeNetwork<float>&, const std::string&,
                                     const std::string&);
template void save_checkpoint<double>(AnytimeNetwork<double>&, const std::string&,
                                      const std::string&);
template void load_checkpoint<float>(AnytimeNetwork<float>&, const std::string&);
template void load_checkpoint<double>(AnytimeNetwork<double>&, const std::string&);

}  // namespace anynet
