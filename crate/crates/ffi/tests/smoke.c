#include <stdio.h>
#include "ngfreg.h"

int main(void) {
    size_t dims[3] = {16, 16, 16};
    double spacing[3] = {1.0, 1.0, 1.0};
    double origin[3] = {0.0, 0.0, 0.0};
    static double data[16 * 16 * 16];
    for (size_t k = 0; k < 16; k++)
        for (size_t j = 0; j < 16; j++)
            for (size_t i = 0; i < 16; i++)
                data[i + 16 * (j + 16 * k)] = (double)((i * 7 + j * 3 + k * 5) % 11);

    NgfregImage *img = NULL;
    if (ngfreg_image_create(dims, spacing, origin, data, 16 * 16 * 16, &img) != NGFREG_STATUS_OK) {
        fprintf(stderr, "create: %s\n", ngfreg_last_error());
        return 1;
    }
    NgfregConfig *cfg = ngfreg_config_new();
    ngfreg_config_set_levels(cfg, 1);
    NgfregDeformation *y = NULL;
    if (ngfreg_register(img, img, cfg, &y) != NGFREG_STATUS_OK) {
        fprintf(stderr, "register: %s\n", ngfreg_last_error());
        return 1;
    }
    double disp = -1.0;
    ngfreg_deformation_max_displacement(y, img, &disp);
    if (ngfreg_image_read("/nonexistent.mha", &img) != NGFREG_STATUS_IO || ngfreg_last_error() == NULL)
        return 1;
    printf("max_displacement %g\n", disp);
    ngfreg_deformation_free(y);
    ngfreg_config_free(cfg);
    ngfreg_image_free(img);
    return disp <= 0.1 ? 0 : 1;
}
