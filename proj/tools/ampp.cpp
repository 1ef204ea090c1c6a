// Copyright 2025 the ampp authors
//
// Licensed under the Apache License, Version 2.0

#include "ampp/cli.hpp"

int main(int argc, char **argv) { return ampp::cli::run(argc, argv); }
