#include "deepafl/serialize.hpp"

#include <fstream>
#include <sstream>

namespace deepafl::io {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("read failure on " + path);
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.good()) throw IoError("write failure on " + path);
}

} // namespace deepafl::io
