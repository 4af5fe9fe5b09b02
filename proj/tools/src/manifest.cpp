#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include "memo/cli/commands.hpp"
#include "memo/error.hpp"

namespace memo::cli {

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256 unavailable");
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex.push_back(kHex[md[i] >> 4]);
        hex.push_back(kHex[md[i] & 15]);
    }
    return hex;
}

std::string RunManifest::render() const {
    std::ostringstream out;
    out << "command=" << command << "\n";
    out << "version=" << version << "\n";
    out << "seed=" << seed << "\n";
    for (const auto& [key, value] : config.entries()) out << "config." << key << "=" << value << "\n";
    for (const auto& [name, path] : inputs) {
        out << "input." << name << ".path=" << path.string() << "\n";
        out << "input." << name << ".sha256=" << sha256_file(path) << "\n";
    }
    for (const auto& [name, path] : outputs) out << "output." << name << "=" << path.string() << "\n";
    return out.str();
}

void RunManifest::write(const std::filesystem::path& path) const {
    const std::string text = render();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << text;
    if (!out) throw IoError("failed writing manifest " + path.string());
}

}  // namespace memo::cli
