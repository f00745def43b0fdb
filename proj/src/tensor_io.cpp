#include "ichseq/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ichseq/errors.hpp"

namespace ichseq::io {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'I', 'C', 'H', 'T', 'N', 'S', 'R', '1'};

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated tensor archive");
    return v;
}

}  // namespace

void write_tensors(std::ostream& out, const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    out.write(kMagic, sizeof(kMagic));
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
        for (std::size_t d : t->shape()) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
}

NamedTensors read_tensors(std::istream& in) {
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("not a tensor archive (bad magic)");
    }
    const auto count = get<std::uint64_t>(in);
    NamedTensors out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint32_t>(in);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw DataError("truncated tensor archive");
        const auto rank = get<std::uint32_t>(in);
        if (rank > 8) throw DataError("tensor archive entry '" + name + "' has implausible rank");
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in));
        Tensor t(shape);
        if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw DataError("truncated tensor archive at '" + name + "'");
        }
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

void save_tensor_archive(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    atomic_write(path, [&](std::ostream& out) { write_tensors(out, tensors); });
}

NamedTensors load_tensor_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor archive", path.string());
    return read_tensors(in);
}

void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write", tmp.string());
        writer(out);
        out.flush();
        if (!out) throw IoError("write failed", tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move temporary file into place (" + ec.message() + ")", path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    atomic_write(path, [&](std::ostream& out) { out << text; });
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace ichseq::io
