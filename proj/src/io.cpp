#include "stepconf/io.hpp"

#include <fstream>
#include <sstream>
#include <system_error>

#include "stepconf/error.hpp"

namespace stepconf {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrKind::Io, "file_open", "cannot open file for reading: " + path.string(),
                {{"path", path.string()}});
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) {
    throw Error(ErrKind::Io, "file_read", "read failure: " + path.string(),
                {{"path", path.string()}});
  }
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error(ErrKind::Io, "file_open", "cannot open file for writing: " + tmp.string(),
                  {{"path", tmp.string()}});
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      throw Error(ErrKind::Io, "file_write", "write failure: " + tmp.string(),
                  {{"path", tmp.string()}});
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw Error(ErrKind::Io, "file_rename",
                "cannot move " + tmp.string() + " over " + path.string(),
                {{"path", path.string()}, {"errno_message", ec.message()}});
  }
}

}  // namespace stepconf
