// Copyright 2025 the ampp authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ampp {

using index_t = std::int64_t;

// All precondition/shape/io violations surface as ampp::Error.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string &what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string &msg) {
    if (!cond) throw Error(msg);
}

} // namespace ampp
