unsigned char clip(unsigned char c) {
    return c > 200u ? (unsigned char)200u : c;
}
