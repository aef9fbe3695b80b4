// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0

#include "mor/cli.hpp"

int main(int argc, char **argv) { return mor::run_cli(argc, argv); }
