#pragma once

#include "covpool/mat.hpp"
#include "covpool/rng.hpp"
#include "covpool/sym_eig.hpp"
#include "covpool/spectral.hpp"
#include "covpool/gcp.hpp"
#include "covpool/diagnostics.hpp"
#include "covpool/io.hpp"
#include "covpool/toy_model.hpp"
#include "covpool/attribution.hpp"
#include "covpool/train.hpp"
#include "covpool/gradcheck.hpp"
