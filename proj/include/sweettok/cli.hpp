#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sweettok/videodata.hpp"

namespace sweettok {

// Exit codes of the command line.
enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitIo = 3, kExitNumeric = 4 };

// Runs one command. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Binary PPM (P6) of 3 rows (original, reconstruction, |error|) by T columns
// of H x W tiles.
std::string encode_grid_ppm(const VideoClip& original, const VideoClip& reconstruction);

// Git blob id: sha1 of "blob <size>\0" followed by the content, as hex.
std::string git_blob_sha1(const std::string& content);

}  // namespace sweettok
