#pragma once

#include "error.hpp"
#include "linalg.hpp"
#include "dual.hpp"
#include "tensor.hpp"
#include "autodiff.hpp"
#include "kernels.hpp"
#include "crystal.hpp"
#include "frames.hpp"
#include "graph.hpp"
#include "params.hpp"
#include "network.hpp"
#include "config.hpp"
#include "io.hpp"
#include "synthetic.hpp"
#include "harness.hpp"
