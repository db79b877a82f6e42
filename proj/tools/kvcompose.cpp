// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "kvcompose/cli.hpp"

int main(int argc, char** argv) { return kvc::run_cli(argc, argv, std::cout, std::cerr); }
