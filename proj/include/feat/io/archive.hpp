// Copyright 2026 The FEAT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reproducible POSIX ustar archives: regular files only, entries in insertion
// order, mtime/uid/gid zero, mode 0644. Readable by standard tar tools.

#pragma once

#include <cstdio>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "feat/error.hpp"

namespace feat::io {

struct ArchiveEntry {
  std::string name;
  std::string data;
};

namespace detail {

inline void put_octal(char* field, std::size_t width, unsigned long long value) {
  // width - 1 digits followed by NUL.
  std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), value);
}

inline unsigned long long parse_octal(const char* field, std::size_t width) {
  unsigned long long v = 0;
  for (std::size_t i = 0; i < width && field[i] != '\0' && field[i] != ' '; ++i) {
    if (field[i] < '0' || field[i] > '7') throw FormatError("archive: malformed octal field");
    v = v * 8 + static_cast<unsigned long long>(field[i] - '0');
  }
  return v;
}

}  // namespace detail

inline std::string write_tar(const std::vector<ArchiveEntry>& entries) {
  std::string out;
  for (const ArchiveEntry& e : entries) {
    if (e.name.empty() || e.name.size() > 99) {
      throw FormatError("archive: entry name '" + e.name + "' must have 1..99 characters");
    }
    char h[512];
    std::memset(h, 0, sizeof h);
    std::memcpy(h, e.name.data(), e.name.size());
    detail::put_octal(h + 100, 8, 0644);
    detail::put_octal(h + 108, 8, 0);
    detail::put_octal(h + 116, 8, 0);
    detail::put_octal(h + 124, 12, e.data.size());
    detail::put_octal(h + 136, 12, 0);
    h[156] = '0';
    std::memcpy(h + 257, "ustar", 6);
    std::memcpy(h + 263, "00", 2);
    std::memset(h + 148, ' ', 8);
    unsigned long sum = 0;
    for (unsigned char c : h) sum += c;
    std::snprintf(h + 148, 8, "%06lo", sum);
    h[155] = ' ';
    out.append(h, sizeof h);
    out += e.data;
    out.append((512 - e.data.size() % 512) % 512, '\0');
  }
  out.append(1024, '\0');
  return out;
}

inline std::vector<ArchiveEntry> read_tar(const std::string& bytes) {
  std::vector<ArchiveEntry> out;
  std::size_t pos = 0;
  while (pos + 512 <= bytes.size()) {
    const char* h = bytes.data() + pos;
    bool zero = true;
    for (std::size_t i = 0; i < 512 && zero; ++i) zero = h[i] == '\0';
    if (zero) return out;
    unsigned long sum = 0;
    for (std::size_t i = 0; i < 512; ++i) {
      sum += (i >= 148 && i < 156) ? static_cast<unsigned char>(' ') : static_cast<unsigned char>(h[i]);
    }
    if (sum != detail::parse_octal(h + 148, 8)) throw FormatError("archive: header checksum mismatch");
    const std::size_t size = detail::parse_octal(h + 124, 12);
    const std::size_t name_len = strnlen(h, 100);
    ArchiveEntry e{std::string(h, name_len), {}};
    pos += 512;
    if (pos + size > bytes.size()) throw FormatError("archive: truncated entry '" + e.name + "'");
    e.data = bytes.substr(pos, size);
    pos += size + (512 - size % 512) % 512;
    if (h[156] == '0' || h[156] == '\0') out.push_back(std::move(e));
  }
  throw FormatError("archive: missing end-of-archive marker");
}

inline const ArchiveEntry& find_entry(const std::vector<ArchiveEntry>& entries, const std::string& name) {
  for (const ArchiveEntry& e : entries) {
    if (e.name == name) return e;
  }
  throw FormatError("archive: no entry named '" + name + "'");
}

}  // namespace feat::io
