#include "clipper/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "clipper/error.hpp"

namespace clipper::train {

namespace {

constexpr char kMagic[8] = {'C', 'L', 'P', 'R', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

void write_array(std::ostream& os, const std::string& name,
                 const ad::Shape& shape, const std::vector<double>& values) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<std::uint32_t>(shape.rank()));
  for (int d = 0; d < shape.rank(); ++d)
    write_u32(os, static_cast<std::uint32_t>(shape.dim(d)));
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(double)));
}

std::pair<std::string, ad::Parameter> read_array(std::istream& is) {
  const std::uint32_t name_len = read_u32(is);
  if (name_len > 4096) throw IoError("checkpoint: implausible name length");
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  if (!is) throw IoError("checkpoint truncated");
  const std::uint32_t rank = read_u32(is);
  if (rank > 8) throw IoError("checkpoint: implausible rank");
  std::vector<int> dims;
  std::size_t numel = 1;
  for (std::uint32_t d = 0; d < rank; ++d) {
    std::uint32_t e = read_u32(is);
    if (e == 0 || e > (1u << 28)) throw IoError("checkpoint: bad extent");
    dims.push_back(static_cast<int>(e));
    numel *= e;
  }
  std::vector<double> values(numel);
  is.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(numel * sizeof(double)));
  if (!is) throw IoError("checkpoint truncated");
  return {name, ad::Parameter{name, ad::Shape{std::move(dims)},
                              std::move(values)}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const ParamStore& params, const AdamW& opt,
                     const Rng& run_rng, int next_epoch, long global_step,
                     const std::string& config_echo) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<std::uint32_t>(params.count()));
  for (const auto& p : params.all()) write_array(os, p.name, p.shape, p.value);

  std::uint32_t opt_count = 0;
  for (const auto& p : params.all())
    if (opt.slots().count(p.name)) opt_count += 2;
  write_u32(os, opt_count);
  for (const auto& p : params.all()) {
    auto it = opt.slots().find(p.name);
    if (it == opt.slots().end()) continue;
    write_array(os, "m:" + p.name, p.shape, it->second.m);
    write_array(os, "v:" + p.name, p.shape, it->second.v);
  }

  std::ostringstream trailer;
  trailer << "opt_step " << opt.step_count() << "\n";
  trailer << "next_epoch " << next_epoch << "\n";
  trailer << "global_step " << global_step << "\n";
  trailer << "rng " << run_rng.serialize() << "\n";
  trailer << "config_begin\n" << config_echo << "config_end\n";
  const std::string text = trailer.str();
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  const std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint version mismatch: file has " +
                  std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));

  LoadedCheckpoint out;
  const std::uint32_t param_count = read_u32(is);
  for (std::uint32_t i = 0; i < param_count; ++i)
    out.params.push_back(read_array(is).second);
  const std::uint32_t opt_count = read_u32(is);
  for (std::uint32_t i = 0; i < opt_count; ++i) {
    auto [name, arr] = read_array(is);
    out.opt_arrays.emplace_back(name, std::move(arr.value));
  }

  const std::uint64_t trailer_len = read_u64(is);
  std::string text(trailer_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(trailer_len));
  if (!is) throw IoError("checkpoint truncated");

  std::istringstream ts(text);
  std::string line;
  bool in_config = false;
  bool saw_end = false;
  while (std::getline(ts, line)) {
    if (in_config) {
      if (line == "config_end") {
        in_config = false;
        saw_end = true;
      } else {
        out.config_echo += line + "\n";
      }
      continue;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "opt_step") {
      ls >> out.opt_step;
    } else if (key == "next_epoch") {
      ls >> out.next_epoch;
    } else if (key == "global_step") {
      ls >> out.global_step;
    } else if (key == "rng") {
      std::getline(ls, out.rng_state);
      if (!out.rng_state.empty() && out.rng_state.front() == ' ')
        out.rng_state.erase(0, 1);
    } else if (key == "config_begin") {
      in_config = true;
    } else if (!key.empty()) {
      throw IoError("checkpoint trailer: unexpected line '" + line + "'");
    }
  }
  if (!saw_end) throw IoError("checkpoint trailer truncated");
  return out;
}

void apply_checkpoint(const LoadedCheckpoint& ckpt, ParamStore& params,
                      AdamW& opt) {
  if (ckpt.params.size() != params.count())
    throw IoError("checkpoint: parameter count mismatch (" +
                  std::to_string(ckpt.params.size()) + " vs " +
                  std::to_string(params.count()) + ")");
  for (const auto& loaded : ckpt.params) {
    if (!params.contains(loaded.name))
      throw IoError("checkpoint: unknown parameter '" + loaded.name + "'");
    auto& p = params.at(loaded.name);
    if (!(p.shape == loaded.shape))
      throw IoError("checkpoint: shape mismatch for '" + loaded.name + "'");
    p.value = loaded.value;
  }
  opt.slots().clear();
  for (const auto& [name, values] : ckpt.opt_arrays) {
    if (name.size() < 3 || name[1] != ':')
      throw IoError("checkpoint: bad optimizer array name '" + name + "'");
    const std::string pname = name.substr(2);
    if (!params.contains(pname))
      throw IoError("checkpoint: optimizer array for unknown parameter '" +
                    pname + "'");
    auto& slot = opt.slots()[pname];
    if (name[0] == 'm') {
      slot.m = values;
    } else if (name[0] == 'v') {
      slot.v = values;
    } else {
      throw IoError("checkpoint: bad optimizer array kind '" + name + "'");
    }
  }
  opt.set_step_count(ckpt.opt_step);
}

}  // namespace clipper::train
