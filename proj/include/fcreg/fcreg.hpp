#pragma once

// Umbrella header for the FC-guided deformable registration library.

#include "fcreg/config.hpp"
#include "fcreg/evalsuite.hpp"
#include "fcreg/funcconn.hpp"
#include "fcreg/nifti.hpp"
#include "fcreg/objective.hpp"
#include "fcreg/parallel.hpp"
#include "fcreg/phantom.hpp"
#include "fcreg/volume.hpp"
#include "fcreg/warp.hpp"
