#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "kwsrl/error.hpp"
#include "kwsrl/policy.hpp"

namespace kwsrl::policy {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[] = "NNCKPT";
constexpr unsigned char kVersion = 1;

std::string shape_token(const nn::Shape& s)
{
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

nn::Shape parse_shape(const std::string& token)
{
    nn::Shape s;
    std::istringstream in(token);
    std::string part;
    while (std::getline(in, part, 'x')) {
        if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
            throw FormatError("bad tensor shape '" + token + "'");
        s.push_back(std::stoull(part));
    }
    if (s.empty()) throw FormatError("empty tensor shape");
    return s;
}

void put_f32(std::string& out, float v)
{
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const unsigned char* p)
{
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

}  // namespace

void save_checkpoint(const PolicyParams& params, const fs::path& path)
{
    const auto specs = layout(params.arch);
    if (specs.size() != params.tensors.size()) throw LogicError("parameter set does not match its architecture");

    std::string header = std::string(kMagic) + static_cast<char>(kVersion) + "\n";
    header += "arch " + params.arch.describe() + "\n";
    std::size_t offset = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (params.tensors[i].shape() != specs[i].shape)
            throw ShapeError("tensor " + specs[i].name + " has shape " + nn::shape_string(params.tensors[i].shape()) +
                             ", layout says " + nn::shape_string(specs[i].shape));
        header += "tensor " + specs[i].name + " " + shape_token(specs[i].shape) + " " + std::to_string(offset) + "\n";
        offset += 4 * params.tensors[i].size();
    }
    header += "payload " + std::to_string(offset) + "\n";

    std::string payload;
    payload.reserve(offset);
    for (const auto& t : params.tensors)
        for (float v : t.data()) put_f32(payload, v);

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    static std::atomic<unsigned> counter{0};
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + tmp.string());
        f.write(header.data(), static_cast<std::streamsize>(header.size()));
        f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!f) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

PolicyParams load_checkpoint(const fs::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    const std::string where = "checkpoint " + path.string() + ": ";

    char magic[8] = {};
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 6) != 0 || magic[7] != '\n') throw FormatError(where + "bad magic");
    if (static_cast<unsigned char>(magic[6]) != kVersion)
        throw FormatError(where + "unsupported version " + std::to_string(static_cast<unsigned char>(magic[6])));

    std::string line;
    if (!std::getline(f, line) || line.rfind("arch ", 0) != 0) throw FormatError(where + "missing architecture line");
    Architecture arch;
    try {
        arch = Architecture::parse(line.substr(5));
    } catch (const ConfigError& e) {
        throw FormatError(where + e.what());
    }
    const auto specs = layout(arch);

    std::size_t expected_offset = 0;
    for (const auto& spec : specs) {
        if (!std::getline(f, line)) throw FormatError(where + "truncated header");
        std::istringstream in(line);
        std::string word, name, shape;
        std::size_t offset = 0;
        if (!(in >> word >> name >> shape >> offset) || word != "tensor")
            throw FormatError(where + "bad tensor line '" + line + "'");
        if (name != spec.name) throw FormatError(where + "expected tensor " + spec.name + ", found " + name);
        if (parse_shape(shape) != spec.shape)
            throw FormatError(where + "tensor " + name + " shape " + shape + " disagrees with the architecture");
        if (offset != expected_offset) throw FormatError(where + "tensor " + name + " has a bad offset");
        expected_offset += 4 * nn::shape_size(spec.shape);
    }
    if (!std::getline(f, line) || line != "payload " + std::to_string(expected_offset))
        throw FormatError(where + "bad payload line");

    std::vector<unsigned char> bytes(expected_offset);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(f.gcount()) != bytes.size())
        throw FormatError(where + "truncated payload (" + std::to_string(f.gcount()) + " of " +
                          std::to_string(bytes.size()) + " bytes)");
    if (f.peek() != std::char_traits<char>::eof()) throw FormatError(where + "trailing bytes after payload");

    PolicyParams p = PolicyParams::zeros(arch);
    const unsigned char* cursor = bytes.data();
    for (auto& t : p.tensors)
        for (float& v : t.data()) {
            v = get_f32(cursor);
            cursor += 4;
        }
    return p;
}

PolicyParams load_checkpoint(const fs::path& path, const Architecture& expected)
{
    PolicyParams p = load_checkpoint(path);
    const auto want = layout(expected);
    const auto have = layout(p.arch);
    for (std::size_t i = 0; i < std::max(want.size(), have.size()); ++i) {
        if (i >= want.size() || i >= have.size() || want[i].name != have[i].name) {
            const std::string name = i < want.size() ? want[i].name : have[i].name;
            throw ShapeError("checkpoint " + path.string() + ": tensor " + name + " missing or unexpected");
        }
        if (want[i].shape != have[i].shape)
            throw ShapeError("checkpoint " + path.string() + ": tensor " + want[i].name + " has shape " +
                             nn::shape_string(have[i].shape) + ", expected " + nn::shape_string(want[i].shape));
    }
    // Shapes agree; keep the caller's view of non-shape settings such as dropout.
    p.arch = expected;
    return p;
}

}  // namespace kwsrl::policy
